#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prosma/tensor.hpp"

namespace prosma {

/// One segmentation example: image in [0,1], binary mask, both [1,H,W].
struct Sample {
    std::string id;
    Tensor image;
    Tensor mask;
};

enum class ClutterLevel { None, Low, High };

ClutterLevel parse_clutter(const std::string& name);  // none|low|high
std::string clutter_name(ClutterLevel c);

/// Corpus recipe. The seed fully determines every pixel and the splits.
struct SynthConfig {
    int size = 64;  // H = W, divisible by 16
    int count = 200;
    uint64_t seed = 1;
    ClutterLevel clutter = ClutterLevel::Low;
    double noise_sigma = 0.08;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<int> train, val, test;  // indices into samples
};

/// Bright elliptic blobs (the mask) on smoothed-noise background, plus
/// distractor ellipses/strokes in the same intensity range that never touch
/// the mask, plus Gaussian pixel noise. Splits are 70/15/15.
Dataset generate(const SynthConfig& config);

/// Layout: DIR/images/ID.pgm, DIR/masks/ID.pgm, DIR/{train,val,test}.txt
/// (one id per line).
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace prosma
