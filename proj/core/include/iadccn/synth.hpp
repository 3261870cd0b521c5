#pragma once

#include <cstddef>
#include <string>

#include "iadccn/image.hpp"
#include "iadccn/rng.hpp"

namespace iadccn::data {

/// Synthetic crowd scenes: dark disc "heads" on a textured background, plus
/// unannotated distractor bars of the same darkness.
struct SynthConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::size_t count_min = 0;
    std::size_t count_max = 20;
    double radius_min = 2.0;
    double radius_max = 3.5;
    /// Expected distractors per scene, as a multiple of count_max.
    double clutter_level = 0.0;

    void validate() const;
};

AnnotatedImage synth_scene(Rng& rng, const SynthConfig& config, std::string id = {});

}  // namespace iadccn::data
