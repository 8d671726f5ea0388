#pragma once

#include <cstdint>
#include <string>

#include "sola/editor.hpp"
#include "sola/evalkit.hpp"
#include "sola/model_config.hpp"
#include "sola/routing.hpp"

namespace sola {

struct BaseTrainParams {
    int epochs = 30;
    double lr = 0.1;
};

/// Everything a run needs; the resolved copy is written beside the outputs
/// of every command so runs stay diffable and resumable.
struct RunConfig {
    ModelConfig model;
    TrainRecipe recipe;
    double alpha = 0.01;
    std::string distance = "cosine";
    BenchmarkParams benchmark;
    BaseTrainParams base_train;
    std::string out_dir;
    uint64_t seed = 7;

    DistanceMetric metric() const { return metric_from_name(distance); }
};

}  // namespace sola
