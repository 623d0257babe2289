#pragma once

// Teacher/student conv nets with four named taps, the subtask logit
// restriction, and teacher pretraining on the clean full task.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "distillab/checkpoint.hpp"
#include "distillab/nn_ops.hpp"
#include "distillab/rng.hpp"

namespace distillab {

enum class NetKind { Teacher, Student };

inline constexpr std::array<const char*, 4> kTapNames = {"tap1", "tap2", "tap3", "tap4"};

// Channel widths per tap (tap4 = GAP vector of the conv3 width).
inline constexpr std::array<int, 4> kTeacherTapChannels = {16, 16, 32, 32};
inline constexpr std::array<int, 4> kStudentTapChannels = {8, 8, 16, 16};
inline constexpr std::array<int, 4> kTapSpatial = {32, 16, 8, 1};

template <typename T>
struct ConvNet {
    NetKind kind = NetKind::Teacher;
    int out_classes = 0;
    Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, fc_w, fc_b;

    std::vector<Tensor<T>> params() const {
        return {conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, fc_w, fc_b};
    }
    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        return {{"conv1.w", conv1_w}, {"conv1.b", conv1_b}, {"conv2.w", conv2_w}, {"conv2.b", conv2_b},
                {"conv3.w", conv3_w}, {"conv3.b", conv3_b}, {"fc.w", fc_w},       {"fc.b", fc_b}};
    }
    void set_requires_grad(bool b) {
        for (auto p : params()) p.set_requires_grad(b);  // handles share the node
    }
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params()) n += p.size();
        return n;
    }
};

template <typename T>
struct ForwardTrace {
    Tensor<T> logits;
    std::array<Tensor<T>, 4> taps;  // tap1 [B,C,32,32], tap2 [B,C,16,16], tap3 [B,C,8,8], tap4 [B,C]
};

template <typename T>
ConvNet<T> build_network(NetKind kind, uint64_t seed);

template <typename T>
ForwardTrace<T> forward_with_taps(const ConvNet<T>& net, const Tensor<T>& batch);

// output[:, i] = logits[:, g[i]] — Eq. 2's restriction as a differentiable map.
template <typename T>
Tensor<T> subtask_project(const Tensor<T>& logits, const std::vector<int>& g) {
    return gather_cols(logits, g);
}

inline std::vector<int> default_subtask_map() { return {0, 1, 2, 3, 4}; }

void save_network(const ConvNet<float>& net, Checkpoint& ck);
ConvNet<float> load_network(const Checkpoint& ck, NetKind kind);

// ---- evaluation / teacher training (float instantiations in models.cpp) ----

struct DatasetSplit;  // data.hpp

// Accuracy in percent; argmax over subtask-restricted logits when g is
// non-empty (teacher), over raw logits otherwise (student).
float evaluate_accuracy(const ConvNet<float>& net, const DatasetSplit& split,
                        const std::vector<int>& g, int batch_size = 256);

struct TeacherTrainOptions {
    float lr = 1e-3f;
    float weight_decay = 1e-2f;
    int max_epochs = 60;
    int patience = 10;
    int batch_size = 64;
    int decay_period = 15;
    float decay_factor = 0.5f;
};

struct TeacherTrainResult {
    float best_val_acc = 0.0f;
    int epochs_run = 0;
    float first_epoch_loss = 0.0f;
    float init_loss = 0.0f;
};

// Cross-entropy training on the clean full task with early stopping on clean
// validation accuracy; the network ends at its best-validation parameters.
TeacherTrainResult train_teacher(ConvNet<float>& net, const DatasetSplit& train,
                                 const DatasetSplit& val, const TeacherTrainOptions& opt,
                                 uint64_t seed);

extern template ConvNet<float> build_network<float>(NetKind, uint64_t);
extern template ConvNet<double> build_network<double>(NetKind, uint64_t);
extern template ForwardTrace<float> forward_with_taps<float>(const ConvNet<float>&, const Tensor<float>&);
extern template ForwardTrace<double> forward_with_taps<double>(const ConvNet<double>&, const Tensor<double>&);

}  // namespace distillab
