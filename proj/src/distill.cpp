#include "distillab/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace distillab {

std::string method_name(Method m) {
    switch (m) {
        case Method::OutputOnly: return "OutputOnly";
        case Method::AT: return "AT";
        case Method::VID: return "VID";
        case Method::VKD: return "VKD";
        case Method::SubDistill: return "SubDistill";
    }
    throw std::invalid_argument("method_name: unknown method");
}

Method parse_method(const std::string& name) {
    for (Method m : kAllMethods)
        if (method_name(m) == name) return m;
    throw std::invalid_argument("unknown method '" + name +
                                "' (expected OutputOnly|AT|VID|VKD|SubDistill)");
}

// ---------------------------------------------------------------------------
// Relevance
// ---------------------------------------------------------------------------

RelevanceTrace teacher_relevance(const ConvNet<float>& teacher, const Tensor<float>& batch,
                                 const std::vector<int>& g) {
    // The input carries requires_grad so the taps live on the tape; teacher
    // parameters stay grad-free throughout.
    Tensor<float> x = Tensor<float>::from(batch.shape(), batch.values());
    x.set_requires_grad(true);

    RelevanceTrace out;
    std::array<Tensor<float>, 4> raw_taps;
    {
        Tape<float> tape;
        auto tr = forward_with_taps(teacher, x);
        auto lsm = log_softmax_rows(tr.logits);
        auto subtask_logprob = sum(gather_cols(lsm, g));
        raw_taps = tr.taps;
        out.logits = Tensor<float>::from(tr.logits.shape(), tr.logits.values());
        tape.backward(subtask_logprob);
    }
    for (const auto& p : teacher.params())
        if (p.has_grad()) throw std::logic_error("teacher_relevance: teacher parameter received a gradient");

    for (int l = 0; l < 4; ++l) {
        const auto& tap = raw_taps[static_cast<size_t>(l)];
        if (!tap.has_grad()) throw std::logic_error("teacher_relevance: tap missing gradient");
        out.acts[static_cast<size_t>(l)] = tap_rows(Tensor<float>::from(tap.shape(), tap.values()));
        out.rels[static_cast<size_t>(l)] = tap_rows(Tensor<float>::from(tap.shape(), tap.grad()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Eq. 4 subspace fit
// ---------------------------------------------------------------------------

template <typename T>
static SubspaceFit fit_subspace_impl(const Tensor<T>& acts, const Tensor<T>& rels, int k, double eps,
                                     const std::string& tap) {
    detail::require_rank(acts, 2, "fit_subspace");
    detail::require_same_shape(acts, rels, "fit_subspace");
    int n = acts.dim(0), d = acts.dim(1);
    if (k < 1 || k > d) throw std::invalid_argument("fit_subspace: K must be in [1, d_T]");
    if (n < 10 * d)
        throw std::invalid_argument("fit_subspace: need at least 10·d_T samples, got " +
                                    std::to_string(n) + " for d_T=" + std::to_string(d));

    std::vector<double> mu_a(static_cast<size_t>(d), 0.0), mu_c(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            mu_a[static_cast<size_t>(j)] += acts.data()[static_cast<size_t>(i) * d + j];
            mu_c[static_cast<size_t>(j)] += rels.data()[static_cast<size_t>(i) * d + j];
        }
    for (int j = 0; j < d; ++j) {
        mu_a[static_cast<size_t>(j)] /= n;
        mu_c[static_cast<size_t>(j)] /= n;
    }

    // M = ½·E[ãc̃ᵀ + c̃ãᵀ] + ε·E[ããᵀ]
    std::vector<double> m(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> at(static_cast<size_t>(d)), ct(static_cast<size_t>(d));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            at[static_cast<size_t>(j)] = acts.data()[static_cast<size_t>(i) * d + j] - mu_a[static_cast<size_t>(j)];
            ct[static_cast<size_t>(j)] = rels.data()[static_cast<size_t>(i) * d + j] - mu_c[static_cast<size_t>(j)];
        }
        for (int r = 0; r < d; ++r) {
            double ar = at[static_cast<size_t>(r)], cr = ct[static_cast<size_t>(r)];
            double* mrow = m.data() + static_cast<size_t>(r) * d;
            for (int c = 0; c < d; ++c)
                mrow[c] += 0.5 * (ar * ct[static_cast<size_t>(c)] + cr * at[static_cast<size_t>(c)]) +
                           eps * ar * at[static_cast<size_t>(c)];
        }
    }
    for (double& v : m) v /= n;

    SymEig eig = sym_eig(m, d);

    SubspaceFit fit;
    fit.d = d;
    fit.m = m;
    fit.eigenvalues = eig.values;
    fit.mu64 = mu_a;
    fit.u64 = Tensor<double>::zeros({d, k});
    for (int col = 0; col < k; ++col)
        for (int row = 0; row < d; ++row)
            fit.u64.data()[static_cast<size_t>(row) * k + col] =
                eig.vectors[static_cast<size_t>(col) * d + row];

    fit.proj.tap = tap;
    fit.proj.k = k;
    fit.proj.u = Tensor<float>::zeros({d, k});
    for (int64_t i = 0; i < fit.u64.size(); ++i)
        fit.proj.u.data()[i] = static_cast<float>(fit.u64.data()[i]);
    fit.proj.mu = Tensor<float>::zeros({d});
    for (int j = 0; j < d; ++j) fit.proj.mu.data()[j] = static_cast<float>(mu_a[static_cast<size_t>(j)]);
    return fit;
}

SubspaceFit fit_subspace(const Tensor<double>& acts, const Tensor<double>& rels, int k, double eps,
                         const std::string& tap) {
    return fit_subspace_impl(acts, rels, k, eps, tap);
}

SubspaceFit fit_subspace(const Tensor<float>& acts, const Tensor<float>& rels, int k, double eps,
                         const std::string& tap) {
    return fit_subspace_impl(acts, rels, k, eps, tap);
}

double subspace_objective(const std::vector<double>& m, int d, const Tensor<double>& u) {
    int k = u.dim(1);
    double tr = 0.0;
    std::vector<double> mu(static_cast<size_t>(d));
    for (int col = 0; col < k; ++col) {
        for (int r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c)
                acc += m[static_cast<size_t>(r) * d + c] * u.data()[static_cast<size_t>(c) * k + col];
            mu[static_cast<size_t>(r)] = acc;
        }
        for (int r = 0; r < d; ++r) tr += u.data()[static_cast<size_t>(r) * k + col] * mu[static_cast<size_t>(r)];
    }
    return tr;
}

void save_projectors(const std::array<SubspaceProjector, 4>& projs, Checkpoint& ck) {
    for (size_t l = 0; l < 4; ++l) {
        const auto& p = projs[l];
        ck.put("proj." + p.tap + ".U", p.u);
        ck.put("proj." + p.tap + ".mu", p.mu);
    }
}

std::array<SubspaceProjector, 4> load_projectors(const Checkpoint& ck) {
    std::array<SubspaceProjector, 4> out;
    for (size_t l = 0; l < 4; ++l) {
        SubspaceProjector p;
        p.tap = kTapNames[l];
        p.u = ck.get_f32("proj." + p.tap + ".U");
        p.mu = ck.get_f32("proj." + p.tap + ".mu");
        p.k = p.u.dim(1);
        out[l] = std::move(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Method state
// ---------------------------------------------------------------------------

void StudentRotation::update_mu(const Tensor<float>& s_rows) {
    int n = s_rows.dim(0), d = s_rows.dim(1);
    std::vector<float> batch_mu(static_cast<size_t>(d), 0.0f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) batch_mu[static_cast<size_t>(j)] += s_rows.data()[static_cast<size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) batch_mu[static_cast<size_t>(j)] /= static_cast<float>(n);
    if (!mu_initialized) {
        std::copy(batch_mu.begin(), batch_mu.end(), mu_s.data());
        mu_initialized = true;
    } else {
        for (int j = 0; j < d; ++j)
            mu_s.data()[j] = ema * mu_s.data()[j] + (1.0f - ema) * batch_mu[static_cast<size_t>(j)];
    }
}

std::vector<Tensor<float>> MethodState::aux_params() const {
    std::vector<Tensor<float>> out;
    for (size_t l = 0; l < 4; ++l) {
        if (rot[l]) out.push_back(rot[l]->v);
        if (vid[l]) {
            out.push_back(vid[l]->w);
            out.push_back(vid[l]->b);
            out.push_back(vid[l]->xi);
        }
        if (vkd[l]) out.push_back(vkd[l]->w);
    }
    return out;
}

void MethodState::post_step() {
    for (size_t l = 0; l < 4; ++l) {
        if (rot[l]) reorthonormalize_rows_inplace(rot[l]->v);
        if (vkd[l]) {
            // Keep Wᵀ's rows (= W's columns) orthonormal.
            auto& w = vkd[l]->w;
            int dt = w.dim(0), ds = w.dim(1);
            Tensor<float> wt = Tensor<float>::zeros({ds, dt});
            for (int i = 0; i < dt; ++i)
                for (int j = 0; j < ds; ++j)
                    wt.data()[static_cast<size_t>(j) * dt + i] = w.data()[static_cast<size_t>(i) * ds + j];
            reorthonormalize_rows_inplace(wt);
            for (int i = 0; i < dt; ++i)
                for (int j = 0; j < ds; ++j)
                    w.data()[static_cast<size_t>(i) * ds + j] = wt.data()[static_cast<size_t>(j) * dt + i];
        }
    }
}

Tensor<float> standardize_rows(const Tensor<float>& rows, const Tensor<float>& mean,
                               const Tensor<float>& inv_std) {
    int n = rows.dim(0), d = rows.dim(1);
    Tensor<float> out = Tensor<float>::zeros({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out.data()[static_cast<size_t>(i) * d + j] =
                (rows.data()[static_cast<size_t>(i) * d + j] - mean.data()[j]) * inv_std.data()[j];
    return out;
}

MethodState make_method_state(Method method, float tau, const std::vector<int>& g, uint64_t seed,
                              const std::array<Tensor<float>, 4>* teacher_rows,
                              const std::array<SubspaceProjector, 4>* projs) {
    MethodState st;
    st.method = method;
    st.tau = tau;
    st.g = g;
    Rng root = Rng(seed).fork(0x617578ULL);

    for (size_t l = 0; l < 4; ++l) {
        int dt = kTeacherTapChannels[l], ds = kStudentTapChannels[l];
        switch (method) {
            case Method::OutputOnly:
            case Method::AT:
                break;
            case Method::VID: {
                VidAdapter a;
                Rng r = root.fork(l);
                float bound = std::sqrt(6.0f / static_cast<float>(ds));
                a.w = Tensor<float>::zeros({dt, ds});
                for (int64_t i = 0; i < a.w.size(); ++i)
                    a.w.data()[i] = static_cast<float>(r.next_double() * 2.0 - 1.0) * bound;
                a.b = Tensor<float>::zeros({dt});
                // softplus(ξ) = 1 at init: unit predictive variance.
                a.xi = Tensor<float>::full({dt}, std::log(std::expm1(1.0f)));
                a.w.set_requires_grad(true);
                a.b.set_requires_grad(true);
                a.xi.set_requires_grad(true);
                st.vid[l] = std::move(a);
                break;
            }
            case Method::VKD: {
                if (!teacher_rows)
                    throw std::invalid_argument("make_method_state: VKD needs teacher rows for statistics");
                VkdAdapter a;
                a.w = Tensor<float>::zeros({dt, ds});
                for (int j = 0; j < ds; ++j) a.w.data()[static_cast<size_t>(j) * ds + j] = 1.0f;
                a.w.set_requires_grad(true);
                const auto& rows = (*teacher_rows)[l];
                int n = rows.dim(0);
                a.mean = Tensor<float>::zeros({dt});
                a.inv_std = Tensor<float>::zeros({dt});
                std::vector<double> mu(static_cast<size_t>(dt), 0.0), var(static_cast<size_t>(dt), 0.0);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < dt; ++j) mu[static_cast<size_t>(j)] += rows.data()[static_cast<size_t>(i) * dt + j];
                for (int j = 0; j < dt; ++j) mu[static_cast<size_t>(j)] /= n;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < dt; ++j) {
                        double dv = rows.data()[static_cast<size_t>(i) * dt + j] - mu[static_cast<size_t>(j)];
                        var[static_cast<size_t>(j)] += dv * dv;
                    }
                for (int j = 0; j < dt; ++j) {
                    a.mean.data()[j] = static_cast<float>(mu[static_cast<size_t>(j)]);
                    a.inv_std.data()[j] =
                        static_cast<float>(1.0 / std::sqrt(std::max(var[static_cast<size_t>(j)] / n, 1e-6)));
                }
                st.vkd[l] = std::move(a);
                break;
            }
            case Method::SubDistill: {
                if (!projs) throw std::invalid_argument("make_method_state: SubDistill needs fitted projectors");
                st.projs[l] = (*projs)[l];
                StudentRotation rot;
                int k = st.projs[l].k;
                if (k > ds)
                    throw std::invalid_argument("make_method_state: K exceeds student width at " +
                                                std::string(kTapNames[l]));
                rot.v = Tensor<float>::zeros({k, ds});
                for (int i = 0; i < k; ++i) rot.v.data()[static_cast<size_t>(i) * ds + i] = 1.0f;
                rot.v.set_requires_grad(true);
                rot.mu_s = Tensor<float>::zeros({ds});
                st.rot[l] = std::move(rot);
                break;
            }
        }
    }
    return st;
}

Tensor<float> total_distill_loss(const ForwardTrace<float>& student, const TeacherSignals& sig,
                                 MethodState& state, float lambda) {
    Tensor<float> total = output_kd_loss(student.logits, sig.logits, state.g, state.tau);
    if (state.method == Method::OutputOnly || lambda == 0.0f) return total;

    Tensor<float> layer_sum;
    for (size_t l = 0; l < 4; ++l) {
        const auto& tap = student.taps[l];
        Tensor<float> term;
        switch (state.method) {
            case Method::AT:
                term = at_loss_from_maps(attention_map(tap), sig.at_maps[l]);
                break;
            case Method::VID:
                term = vid_layer_loss(tap_rows(tap), sig.rows[l], state.vid[l]->w, state.vid[l]->b,
                                      state.vid[l]->xi);
                break;
            case Method::VKD:
                term = vkd_layer_loss(tap_rows(tap), sig.std_rows[l], state.vkd[l]->w);
                break;
            case Method::SubDistill: {
                auto s_rows = tap_rows(tap);
                state.rot[l]->update_mu(s_rows);
                term = subdistill_layer_loss(s_rows, sig.proj_targets[l], state.rot[l]->v,
                                             state.rot[l]->mu_s);
                break;
            }
            case Method::OutputOnly:
                throw std::logic_error("unreachable");
        }
        layer_sum = l == 0 ? term : add(layer_sum, term);
    }
    return add(total, scale(layer_sum, lambda));
}

}  // namespace distillab
