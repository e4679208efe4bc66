#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "coco/mlp.hpp"
#include "coco/trainer.hpp"

namespace coco {

// Plain-text `key = value` experiment configuration. Unknown keys are a hard
// error so typos cannot silently fall back to defaults. Later lines override
// earlier ones; the `preset` key (default | face) swaps in a named learning
// schedule and can itself be overridden by subsequent keys.
struct ExperimentConfig {
    // dataset generation
    int num_classes = 10;
    int per_class = 200;
    int input_dim = 2;
    double spread = 0.05;

    // model
    std::vector<std::size_t> hidden_dims = {32};
    std::size_t embedding_dim = 8;
    Activation activation = Activation::Relu;

    // training
    TrainConfig train;
    std::string loss = "coco";  // coco | softmax

    // gradient check
    double gc_step = 1e-6;
    double gc_tol = 1e-5;
    int gc_batch_size = 8;

    // logistic fusion fitting
    int fit_iterations = 10000;
    double fit_learning_rate = 0.1;
    int fit_max_pairs = 20000;  // per side; 0 = no cap; excess strided away

    std::vector<std::size_t> layer_dims() const;
    void validate() const;
};

ExperimentConfig parse_experiment_config(std::istream& in, const std::string& name);
ExperimentConfig read_experiment_config(const std::string& path);

}  // namespace coco
