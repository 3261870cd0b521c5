#include "iadccn_cli/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "iadccn/error.hpp"

namespace iadccn::cli {

std::string git_blob_sha1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';

    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);

    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::filesystem::path write_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
    nlohmann::ordered_json j;
    j["command"] = manifest.command;
    j["arguments"] = manifest.arguments;
    j["seed"] = manifest.seed;
    j["config"] = manifest.config;
    auto& files = j["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& p : manifest.artifacts) {
        files.push_back({{"path", std::filesystem::relative(p, dir).generic_string()},
                         {"bytes", std::filesystem::file_size(p)},
                         {"sha1", git_blob_sha1(p)}});
    }
    j["started"] = manifest.started;
    j["finished"] = utc_timestamp();

    const auto path = dir / "manifest.json";
    const auto tmp = dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw DataError("cannot write " + tmp.string());
        }
        out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
    return path;
}

}  // namespace iadccn::cli
