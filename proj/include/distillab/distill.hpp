#pragma once

// The five distillation objectives: temperature-scaled output KD restricted to
// the subtask logits, attention transfer, variational information
// distillation, variance-normalized KD with an orthogonal adapter, and
// relevance-guided subspace distillation (relevance vectors -> eigensolve ->
// rotated alignment).
//
// Loss primitives are templated so the verification-precision instantiation
// can be driven against finite differences; orchestration runs in f32.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "distillab/checkpoint.hpp"
#include "distillab/linalg.hpp"
#include "distillab/models.hpp"
#include "distillab/nn_ops.hpp"

namespace distillab {

enum class Method { OutputOnly, AT, VID, VKD, SubDistill };

constexpr std::array<Method, 5> kAllMethods = {Method::OutputOnly, Method::AT, Method::VID,
                                               Method::VKD, Method::SubDistill};

std::string method_name(Method m);
Method parse_method(const std::string& name);

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// τ²·KL( softmax(g∘teacher/τ) ‖ softmax(student/τ) ), batch-averaged.  The
// teacher side is typically a constant (cached logits).
template <typename T>
Tensor<T> output_kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                         const std::vector<int>& g, T tau) {
    if (tau <= T(0)) throw std::invalid_argument("output_kd_loss: tau must be positive");
    if (static_cast<int>(g.size()) != student_logits.dim(1))
        throw std::invalid_argument("output_kd_loss: subtask map size does not match student logits");
    auto t_sub = gather_cols(teacher_logits, g);
    auto lp = log_softmax_rows(scale(t_sub, T(1) / tau));
    auto lq = log_softmax_rows(scale(student_logits, T(1) / tau));
    return scale(kl_div_rows(lp, lq), tau * tau);
}

// Per-sample attention map: channel sum of squares flattened over space,
// L2-normalized with an ε guard.  Accepts NCHW taps or [B,C] pooled taps
// (which collapse to a single spatial cell).
template <typename T>
Tensor<T> attention_map(const Tensor<T>& tap, T eps = T(1e-12)) {
    if (tap.rank() == 4) return row_l2_normalize(channel_sumsq(tap), eps);
    if (tap.rank() == 2) {
        auto q = matmul_nt(square(tap), Tensor<T>::full({1, tap.dim(1)}, T(1)));  // [B,1]
        return row_l2_normalize(q, eps);
    }
    throw std::invalid_argument("attention_map: expected rank 4 or 2, got " + shape_str(tap.shape()));
}

// Mean over the batch of ‖q̂_S − q̂_T‖².
template <typename T>
Tensor<T> at_loss_from_maps(const Tensor<T>& qs, const Tensor<T>& qt) {
    detail::require_same_shape(qs, qt, "at_loss_from_maps");
    auto d = square(sub(qs, qt));
    return scale(sum(d), T(1) / static_cast<T>(qs.dim(0)));
}

template <typename T>
Tensor<T> at_layer_loss(const Tensor<T>& s_tap, const Tensor<T>& t_tap) {
    if (s_tap.rank() == 4 && t_tap.rank() == 4 &&
        (s_tap.dim(2) != t_tap.dim(2) || s_tap.dim(3) != t_tap.dim(3)))
        throw std::invalid_argument("at_layer_loss: spatial dims differ");
    return at_loss_from_maps(attention_map(s_tap), attention_map(t_tap));
}

// Gaussian variational bound, element-mean over rows×teacher-channels:
//   log σ_c + (t_c − μ_c(s))² / (2σ_c²),  σ = softplus(ξ) + 1e-6.
// Rows are channel-last (one row per sample or per spatial location).
template <typename T>
Tensor<T> vid_layer_loss(const Tensor<T>& s_rows, const Tensor<T>& t_rows, const Tensor<T>& w,
                         const Tensor<T>& b, const Tensor<T>& xi) {
    auto pred = affine(s_rows, w, b);                       // [N, d_T]
    auto sigma = add_scalar(softplus(xi), T(1e-6));         // [d_T]
    auto denom = scale(square(sigma), T(2));
    auto quad = div_rowvec(square(sub(t_rows, pred)), denom);
    return mean(add_rowvec(quad, log_t(sigma)));
}

// ‖W a_S − standardized a_T‖², mean over rows.  W's columns are kept
// orthonormal by the trainer; the teacher side is standardized beforehand
// with distillation-set statistics.
template <typename T>
Tensor<T> vkd_layer_loss(const Tensor<T>& s_rows, const Tensor<T>& t_std_rows, const Tensor<T>& w) {
    auto pred = matmul_nt(s_rows, w);  // [N, d_T]
    auto d = square(sub(pred, t_std_rows));
    return scale(sum(d), T(1) / static_cast<T>(s_rows.dim(0)));
}

// Eq.-5-style alignment with batch-level normalization:
//   Σ_b ‖V(a_S,b − μ_S) − t_b‖² / (Σ_b ‖t_b‖² + 1e-8),
// where t_b = Uᵀ(a_T,b − μ_T) arrives precomputed (the projector is frozen).
template <typename T>
Tensor<T> subdistill_layer_loss(const Tensor<T>& s_rows, const Tensor<T>& t_proj,
                                const Tensor<T>& v, const Tensor<T>& mu_s) {
    auto pred = matmul_nt(sub_rowvec(s_rows, mu_s), v);  // [N, K]
    auto num = sum(square(sub(pred, t_proj)));
    double denom = 1e-8;
    for (T x : t_proj.values()) denom += static_cast<double>(x) * static_cast<double>(x);
    return scale(num, static_cast<T>(1.0 / denom));
}

// ---------------------------------------------------------------------------
// Teacher-side relevance and the Eq.-4 subspace fit
// ---------------------------------------------------------------------------

// Channel-last rows of a tap: [B·H·W, C] for spatial taps, [B, C] for tap4.
template <typename T>
Tensor<T> tap_rows(const Tensor<T>& tap) {
    return tap.rank() == 4 ? nchw_to_rows(tap) : tap;
}

struct RelevanceTrace {
    std::array<Tensor<float>, 4> acts;  // channel-last rows per tap
    std::array<Tensor<float>, 4> rels;  // ∂(Σ_{c∈g} log p_c)/∂tap, same layout
    Tensor<float> logits;               // [B, C]
};

// Runs the frozen teacher, backpropagates the summed subtask log-probability
// to every tap, and returns activations with their relevance vectors.
// Teacher parameters never receive gradients.
RelevanceTrace teacher_relevance(const ConvNet<float>& teacher, const Tensor<float>& batch,
                                 const std::vector<int>& g);

struct SubspaceProjector {
    std::string tap;
    int k = 0;
    Tensor<float> u;   // [d_T, K], orthonormal columns; frozen after fitting
    Tensor<float> mu;  // [d_T]
};

struct SubspaceFit {
    SubspaceProjector proj;
    int d = 0;
    std::vector<double> m;            // the symmetrized objective matrix, d×d
    std::vector<double> eigenvalues;  // all d, descending
    Tensor<double> u64;               // [d_T, K]
    std::vector<double> mu64;
};

// M = ½·E[ãc̃ᵀ + c̃ãᵀ] + ε·E[ããᵀ] over centered activations/relevances;
// U = top-K eigenvectors.  Requires sample count ≥ 10·d_T.  Accumulation and
// the eigensolve always run in verification precision.
SubspaceFit fit_subspace(const Tensor<double>& acts, const Tensor<double>& rels, int k,
                         double eps = 1e-3, const std::string& tap = "");
SubspaceFit fit_subspace(const Tensor<float>& acts, const Tensor<float>& rels, int k,
                         double eps = 1e-3, const std::string& tap = "");

// The Eq.-4 objective trace(UᵀMU) for an arbitrary [d,K] frame.
double subspace_objective(const std::vector<double>& m, int d, const Tensor<double>& u);

void save_projectors(const std::array<SubspaceProjector, 4>& projs, Checkpoint& ck);
std::array<SubspaceProjector, 4> load_projectors(const Checkpoint& ck);

// ---------------------------------------------------------------------------
// Trainable per-method state beyond the student network
// ---------------------------------------------------------------------------

struct StudentRotation {
    Tensor<float> v;     // [K, d_S], trainable, rows kept orthonormal
    Tensor<float> mu_s;  // [d_S] EMA buffer (not a parameter)
    float ema = 0.99f;
    bool mu_initialized = false;

    void update_mu(const Tensor<float>& s_rows);  // before the loss, per batch
};

struct VidAdapter {
    Tensor<float> w;   // [d_T, d_S]
    Tensor<float> b;   // [d_T]
    Tensor<float> xi;  // [d_T], σ = softplus(ξ) + 1e-6
};

struct VkdAdapter {
    Tensor<float> w;        // [d_T, d_S], columns kept orthonormal
    Tensor<float> mean;     // [d_T] distillation-set statistics (frozen)
    Tensor<float> inv_std;  // [d_T], 1/√max(var, 1e-6)
};

// Per-batch teacher-side constants, already sliced for the batch.
struct TeacherSignals {
    Tensor<float> logits;                         // [B, C] — always needed
    std::array<Tensor<float>, 4> rows;            // VID (raw rows)
    std::array<Tensor<float>, 4> at_maps;         // AT (normalized maps)
    std::array<Tensor<float>, 4> std_rows;        // VKD (standardized rows)
    std::array<Tensor<float>, 4> proj_targets;    // SubDistill (Uᵀ(a_T−μ_T))
};

struct MethodState {
    Method method = Method::OutputOnly;
    float tau = 2.0f;
    std::vector<int> g = default_subtask_map();

    std::array<std::optional<StudentRotation>, 4> rot;  // SubDistill
    std::array<std::optional<VidAdapter>, 4> vid;       // VID
    std::array<std::optional<VkdAdapter>, 4> vkd;       // VKD
    std::array<SubspaceProjector, 4> projs;             // SubDistill, frozen

    std::vector<Tensor<float>> aux_params() const;
    void post_step();  // constraint projection after each optimizer step
};

// Builds the method's auxiliary state.  For VKD, teacher standardization
// statistics come from `teacher_rows` (the distillation set's cached rows);
// for SubDistill the fitted projectors must be supplied.
MethodState make_method_state(Method method, float tau, const std::vector<int>& g, uint64_t seed,
                              const std::array<Tensor<float>, 4>* teacher_rows,
                              const std::array<SubspaceProjector, 4>* projs);

// Standardize teacher rows with an adapter's frozen statistics (not taped).
Tensor<float> standardize_rows(const Tensor<float>& rows, const Tensor<float>& mean,
                               const Tensor<float>& inv_std);

// Full Eq.-3 objective: output KD plus λ·Σ over the four pairings of the
// method's layer loss.  Mutates SubDistill's μ_S EMA buffers.
Tensor<float> total_distill_loss(const ForwardTrace<float>& student, const TeacherSignals& sig,
                                 MethodState& state, float lambda);

}  // namespace distillab
