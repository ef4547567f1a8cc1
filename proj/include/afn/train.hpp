#pragma once

#include "afn/config.hpp"
#include "afn/data_io.hpp"
#include "afn/models.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace afn {

struct TrainConfig {
    std::string arch = "basic";
    std::string profile = "full"; // full: 8 hidden layers, 75^3 segments;
                                   // desk: 4 scaled layers, 32^3 segments
    int epochs = 300;
    int batch_segments = 7;
    int segment_size = 75;
    double lr_initial = 0.001;
    double lr_reduced = 0.0001;
    int lr_drop_epoch = 200; // 0-indexed: lr_initial for epochs < drop
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::vector<std::string> manifest; // volume paths
    int checkpoint_every = 100;        // epochs; 0 = only final
    std::string out_dir = ".";
    int num_input_channels = 1;
    int num_classes = 0; // 0 = infer from the data
    bool batchnorm = true;
    bool class_balance = true;
    bool normalize_volumes = true;
    bool normalize_masked = false;
    double target_loss = 0; // early stop when epoch mean loss < target
    int max_steps = 0;      // hard step cap (0 = none)
    std::string resume; // checkpoint basename (expects .afnw and .opt files)

    void validate() const;
    static TrainConfig from_config(const Config& cfg);
};

// Pure function of the epoch index: lr_initial for epochs < lr_drop_epoch,
// lr_reduced from lr_drop_epoch on.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct AdamState {
    std::map<std::string, Tensor> m, v;
    std::int64_t step = 0;
};

// One ADAM update over every trainable parameter; shared parameters receive
// exactly one update (their gradient already carries the sum over uses).
// Throws on non-finite gradients, naming the parameter.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

void save_checkpoint(const Model& m, const AdamState& st, int next_epoch,
                     const std::string& basename);
void load_checkpoint(Model& m, AdamState& st, int& next_epoch,
                     const std::string& basename);

struct TrainResult {
    Model model;
    int steps = 0;
    int epochs_run = 0;
    double final_epoch_loss = 0;
    std::vector<double> step_losses;
};

TrainResult train(const TrainConfig& cfg);

// Re-estimates batchnorm running statistics with training-mode forward
// passes over whole volumes. Patch-based training sees class-balanced crops
// whose statistics can differ from full volumes; refreshing the stats on the
// evaluation distribution removes that train/eval normalization gap. No-op
// for models without batchnorm.
void refresh_batchnorm_stats(Model& m, const std::vector<VolumeRecord>& volumes,
                             int passes = 8);

// Sliding-window full-volume inference: window positions stride by
// (window - overlap), the last window clamps to the volume edge, and
// overlapping logits are averaged before the argmax.
LabelVolume predict_labels(const Model& m, const VolumeRecord& v, int window,
                           int overlap = 8);

// Per-class dice over the manifest volumes (foreground classes; class 0 is
// background and excluded from the report).
MetricsReport evaluate(const Model& m, const std::vector<VolumeRecord>& volumes,
                       int window, int overlap = 8);

// Writes Lambda^1..Lambda^K of the requested autofocus layer (1-based
// hidden-layer index) as single-channel AFNV volumes into out_dir; returns
// the file paths.
std::vector<std::string> export_attention(const Model& m, const VolumeRecord& v,
                                          int layer, const std::string& out_dir);

} // namespace afn
