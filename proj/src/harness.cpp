#include "distillab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "distillab/optim.hpp"

namespace fs = std::filesystem;

namespace distillab {

namespace {

int rho_pct(double rho) { return static_cast<int>(std::lround(rho * 100.0)); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

uint64_t split_tag(double rho, uint64_t base) { return base + static_cast<uint64_t>(rho_pct(rho)); }

}  // namespace

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

DatasetSplit build_train_split(const ExperimentConfig& cfg, double rho) {
    ContaminationPolicy p;
    p.rho = rho;
    p.mode = ContMode::Correlated;
    return build_split(cfg.n_train, SplitRole::Train, p, {0, 1, 2, 3, 4},
                       Rng(cfg.data_seed).fork(split_tag(rho, 1000)).key(), cfg.sigma_noise);
}

DatasetSplit build_test_split(const ExperimentConfig& cfg, double rho) {
    ContaminationPolicy p;
    p.rho = rho;
    p.mode = ContMode::Random;
    return build_split(cfg.n_test, SplitRole::Test, p, {0, 1, 2, 3, 4},
                       Rng(cfg.data_seed).fork(split_tag(rho, 2000)).key(), cfg.sigma_noise);
}

ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    std::vector<int> all_classes(kFullClasses);
    for (int i = 0; i < kFullClasses; ++i) all_classes[static_cast<size_t>(i)] = i;
    ContaminationPolicy clean;  // ρ=0
    d.teacher_train = build_split(cfg.n_teacher_train, SplitRole::Train, clean, all_classes,
                                  Rng(cfg.data_seed).fork(1).key(), cfg.sigma_noise);
    d.teacher_val = build_split(cfg.n_teacher_val, SplitRole::Validation, clean, all_classes,
                                Rng(cfg.data_seed).fork(2).key(), cfg.sigma_noise);
    ContaminationPolicy stamped;
    stamped.rho = 1.0;
    stamped.mode = ContMode::Random;
    d.artifact_test = build_split(cfg.n_test, SplitRole::Test, stamped, {0, 1, 2, 3, 4},
                                  Rng(cfg.data_seed).fork(3).key(), cfg.sigma_noise);
    for (double rho : cfg.rhos) {
        d.train_by_rho.push_back(build_train_split(cfg, rho));
        d.test_by_rho.push_back(build_test_split(cfg, rho));
    }
    return d;
}

uint64_t oracle_seed(const ExperimentConfig& cfg, int seed_idx) {
    return Rng(cfg.data_seed).fork(0x6F7261ULL).fork(static_cast<uint64_t>(seed_idx)).key();
}

uint64_t run_seed(const ExperimentConfig& cfg, int seed_idx) {
    return Rng(cfg.data_seed).fork(0x72756EULL).fork(static_cast<uint64_t>(seed_idx)).key();
}

// ---------------------------------------------------------------------------
// Teacher trace cache
// ---------------------------------------------------------------------------

void TeacherTraceCache::drop_relevance() {
    for (auto& t : rel_rows) t = Tensor<float>();
}

TeacherTraceCache build_teacher_trace(const ConvNet<float>& teacher, const DatasetSplit& split,
                                      const std::vector<int>& g, int batch_size) {
    TeacherTraceCache cache;
    int n = static_cast<int>(split.samples.size());
    cache.n = n;
    cache.logits = Tensor<float>::zeros({n, teacher.out_classes});
    for (size_t l = 0; l < 4; ++l) {
        int c = kTeacherTapChannels[l];
        cache.rows[l] = Tensor<float>::zeros({n * cache.hw[l], c});
        cache.rel_rows[l] = Tensor<float>::zeros({n * cache.hw[l], c});
    }
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        std::vector<int> idx(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
        auto rel = teacher_relevance(teacher, batch_pixels(split, idx), g);
        std::copy(rel.logits.values().begin(), rel.logits.values().end(),
                  cache.logits.data() + static_cast<size_t>(start) * teacher.out_classes);
        for (size_t l = 0; l < 4; ++l) {
            size_t off = static_cast<size_t>(start) * cache.hw[l] * kTeacherTapChannels[l];
            std::copy(rel.acts[l].values().begin(), rel.acts[l].values().end(), cache.rows[l].data() + off);
            std::copy(rel.rels[l].values().begin(), rel.rels[l].values().end(),
                      cache.rel_rows[l].data() + off);
        }
    }
    return cache;
}

std::array<SubspaceProjector, 4> fit_all_projectors(const TeacherTraceCache& trace, int k) {
    std::array<SubspaceProjector, 4> out;
    for (size_t l = 0; l < 4; ++l) {
        if (!trace.rel_rows[l].defined())
            throw std::logic_error("fit_all_projectors: relevance rows already dropped");
        int dt = kTeacherTapChannels[l];
        int ds = kStudentTapChannels[l];
        int kl = std::min({k, ds, dt});
        out[l] = fit_subspace(trace.rows[l], trace.rel_rows[l], kl, 1e-3, kTapNames[l]).proj;
    }
    return out;
}

std::array<Tensor<float>, 4> project_teacher_rows(const TeacherTraceCache& trace,
                                                  const std::array<SubspaceProjector, 4>& projs) {
    std::array<Tensor<float>, 4> out;
    for (size_t l = 0; l < 4; ++l) {
        const auto& rows = trace.rows[l];
        const auto& p = projs[l];
        int n = rows.dim(0), dt = rows.dim(1), k = p.k;
        out[l] = Tensor<float>::zeros({n, k});
        std::vector<float> centered(static_cast<size_t>(dt));
        for (int i = 0; i < n; ++i) {
            const float* r = rows.data() + static_cast<size_t>(i) * dt;
            for (int j = 0; j < dt; ++j) centered[static_cast<size_t>(j)] = r[j] - p.mu.data()[j];
            float* o = out[l].data() + static_cast<size_t>(i) * k;
            for (int col = 0; col < k; ++col) {
                float acc = 0.0f;
                for (int j = 0; j < dt; ++j)
                    acc += centered[static_cast<size_t>(j)] * p.u.data()[static_cast<size_t>(j) * k + col];
                o[col] = acc;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-batch teacher signals
// ---------------------------------------------------------------------------

namespace {

Tensor<float> slice_rows(const Tensor<float>& rows, const std::vector<int>& idx, int hw) {
    int b = static_cast<int>(idx.size()), c = rows.dim(1);
    Tensor<float> out = Tensor<float>::zeros({b * hw, c});
    for (int i = 0; i < b; ++i)
        std::copy(rows.data() + static_cast<size_t>(idx[static_cast<size_t>(i)]) * hw * c,
                  rows.data() + (static_cast<size_t>(idx[static_cast<size_t>(i)]) + 1) * hw * c,
                  out.data() + static_cast<size_t>(i) * hw * c);
    return out;
}

// Normalized attention map per sample from channel-last rows.
Tensor<float> at_map_from_rows(const Tensor<float>& rows, int b, int hw) {
    int c = rows.dim(1);
    Tensor<float> out = Tensor<float>::zeros({b, hw});
    for (int i = 0; i < b; ++i) {
        float* q = out.data() + static_cast<size_t>(i) * hw;
        for (int s = 0; s < hw; ++s) {
            const float* r = rows.data() + (static_cast<size_t>(i) * hw + s) * c;
            float acc = 0.0f;
            for (int j = 0; j < c; ++j) acc += r[j] * r[j];
            q[s] = acc;
        }
        float nrm = 0.0f;
        for (int s = 0; s < hw; ++s) nrm += q[s] * q[s];
        nrm = std::max(std::sqrt(nrm), 1e-12f);
        for (int s = 0; s < hw; ++s) q[s] /= nrm;
    }
    return out;
}

TeacherSignals slice_signals(const TeacherTraceCache& trace,
                             const std::array<Tensor<float>, 4>* proj_targets, const MethodState& state,
                             const std::vector<int>& idx) {
    TeacherSignals sig;
    int b = static_cast<int>(idx.size());
    int tc = trace.logits.dim(1);
    sig.logits = Tensor<float>::zeros({b, tc});
    for (int i = 0; i < b; ++i)
        std::copy(trace.logits.data() + static_cast<size_t>(idx[static_cast<size_t>(i)]) * tc,
                  trace.logits.data() + (static_cast<size_t>(idx[static_cast<size_t>(i)]) + 1) * tc,
                  sig.logits.data() + static_cast<size_t>(i) * tc);
    for (size_t l = 0; l < 4; ++l) {
        int hw = trace.hw[l];
        switch (state.method) {
            case Method::OutputOnly:
                break;
            case Method::AT:
                sig.at_maps[l] = at_map_from_rows(slice_rows(trace.rows[l], idx, hw), b, hw);
                break;
            case Method::VID:
                sig.rows[l] = slice_rows(trace.rows[l], idx, hw);
                break;
            case Method::VKD:
                sig.std_rows[l] = standardize_rows(slice_rows(trace.rows[l], idx, hw),
                                                   state.vkd[l]->mean, state.vkd[l]->inv_std);
                break;
            case Method::SubDistill:
                sig.proj_targets[l] = slice_rows((*proj_targets)[l], idx, hw);
                break;
        }
    }
    return sig;
}

}  // namespace

// ---------------------------------------------------------------------------
// Student training
// ---------------------------------------------------------------------------

RunRecord train_student(const StudentRunInputs& in, ConvNet<float>& student_out) {
    const auto& cfg = *in.cfg;
    auto t0 = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.method = method_name(in.method);
    rec.rho = in.rho;
    rec.lambda = in.lambda;
    rec.seed = in.seed_idx;

    uint64_t rseed = run_seed(cfg, in.seed_idx);
    ConvNet<float> student = build_network<float>(NetKind::Student, Rng(rseed).fork(0x6E6574ULL).key());
    student.set_requires_grad(true);
    student_out = student;

    try {
        MethodState state = make_method_state(in.method, static_cast<float>(cfg.tau),
                                              default_subtask_map(), rseed, &in.trace->rows, in.projs);
        std::vector<Tensor<float>> params = student.params();
        for (auto& p : state.aux_params()) params.push_back(p);
        AdamW<float>::Options aopt;
        aopt.lr = static_cast<float>(cfg.lr);
        aopt.weight_decay = static_cast<float>(cfg.weight_decay);
        AdamW<float> opt(params, aopt);

        int n = static_cast<int>(in.train->samples.size());
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_root = Rng(rseed).fork(0x73687566ULL);
        float lambda = static_cast<float>(in.lambda.value_or(0.0));

        Checkpoint best;
        float best_acc = -1.0f;
        int since_best = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            opt.set_lr(static_cast<float>(cfg.lr * std::pow(cfg.decay_factor, epoch / cfg.decay_period)));
            Rng sh = shuffle_root.fork(static_cast<uint64_t>(epoch));
            for (int i = n; i > 1; --i)
                std::swap(order[static_cast<size_t>(i - 1)], order[sh.next_below(static_cast<uint64_t>(i))]);

            for (int start = 0; start < n; start += cfg.batch_size) {
                int b = std::min(cfg.batch_size, n - start);
                std::vector<int> idx(order.begin() + start, order.begin() + start + b);
                TeacherSignals sig = slice_signals(*in.trace, in.proj_targets, state, idx);
                Tape<float> tape;
                auto tr = forward_with_taps(student, batch_pixels(*in.train, idx));
                auto loss = total_distill_loss(tr, sig, state, lambda);
                tape.backward(loss);
                opt.step();
                state.post_step();
                opt.zero_grad();
            }

            float acc = evaluate_accuracy(student, *in.val, {});
            rec.epoch_stopped = epoch + 1;
            if (acc > best_acc) {
                best_acc = acc;
                since_best = 0;
                best = Checkpoint();
                save_network(student, best);
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
        for (auto [name, t] : student.named_params()) best.load_into(name, t);
        rec.val_acc = best_acc;
    } catch (const NumericError&) {
        // Divergence is a recorded outcome, not a crash.
        rec.failed = true;
        rec.val_acc = 0.0;
        rec.test_acc = 0.0;
    }
    rec.wall_s =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    return rec;
}

size_t select_lambda(const std::vector<RunRecord>& records) {
    if (records.empty()) throw std::invalid_argument("select_lambda: no records");
    size_t best = 0;
    for (size_t i = 1; i < records.size(); ++i) {
        double li = records[i].lambda.value_or(0.0), lb = records[best].lambda.value_or(0.0);
        if (records[i].val_acc > records[best].val_acc ||
            (records[i].val_acc == records[best].val_acc && li < lb))
            best = i;
    }
    return best;
}

std::string severity_band(double mean_acc) {
    if (mean_acc < 50.0) return "red";
    if (mean_acc < 75.0) return "orange";
    if (mean_acc < 90.0) return "yellow";
    return "";
}

ResultsTable aggregate(const std::vector<RunRecord>& records, const std::vector<std::string>& methods,
                       const std::vector<double>& rhos, int seeds) {
    ResultsTable table;
    table.methods = methods;
    table.rhos = rhos;
    for (const auto& m : methods) {
        double max_se = 0.0;
        for (double rho : rhos) {
            std::vector<double> accs;
            for (int s = 0; s < seeds; ++s) {
                std::vector<RunRecord> grid;
                for (const auto& r : records)
                    if (r.method == m && r.rho == rho && r.seed == s) grid.push_back(r);
                if (grid.empty()) {
                    table.missing_cells.push_back(m + " rho=" + fmt("%g", rho) + " seed=" + std::to_string(s));
                    continue;
                }
                accs.push_back(grid[select_lambda(grid)].test_acc);
            }
            ResultCell cell;
            cell.method = m;
            cell.rho = rho;
            cell.n_seeds = static_cast<int>(accs.size());
            if (!accs.empty()) {
                double mean = 0.0;
                for (double a : accs) mean += a;
                mean /= static_cast<double>(accs.size());
                double var = 0.0;
                for (double a : accs) var += (a - mean) * (a - mean);
                double se = accs.size() > 1
                                ? std::sqrt(var / static_cast<double>(accs.size() - 1)) /
                                      std::sqrt(static_cast<double>(accs.size()))
                                : 0.0;
                cell.mean_acc = mean;
                cell.std_err = se;
                cell.band = severity_band(mean);
                max_se = std::max(max_se, se);
            }
            table.cells.push_back(std::move(cell));
        }
        table.row_max_se.push_back(max_se);
    }
    return table;
}

// ---------------------------------------------------------------------------
// CSV / text
// ---------------------------------------------------------------------------

void write_records_csv(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_records_csv: cannot open " + path);
    os << "method,rho,lambda,seed,val_acc,test_acc,epoch_stopped,wall_s\n";
    for (const auto& r : records) {
        os << r.method << ',' << fmt("%g", r.rho) << ',';
        if (r.lambda)
            os << fmt("%g", *r.lambda);
        else
            os << "na";
        os << ',' << r.seed << ',' << fmt("%.4f", r.val_acc) << ',' << fmt("%.4f", r.test_acc) << ','
           << r.epoch_stopped << ',' << fmt("%.3f", r.wall_s) << '\n';
    }
}

std::vector<RunRecord> read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_records_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "method,rho,lambda,seed,val_acc,test_acc,epoch_stopped,wall_s")
        throw std::runtime_error("read_records_csv: bad header in " + path);
    std::vector<RunRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        RunRecord r;
        std::getline(ss, r.method, ',');
        std::getline(ss, field, ',');
        r.rho = std::stod(field);
        std::getline(ss, field, ',');
        if (field != "na") r.lambda = std::stod(field);
        std::getline(ss, field, ',');
        r.seed = std::stoi(field);
        std::getline(ss, field, ',');
        r.val_acc = std::stod(field);
        std::getline(ss, field, ',');
        r.test_acc = std::stod(field);
        std::getline(ss, field, ',');
        r.epoch_stopped = std::stoi(field);
        std::getline(ss, field, ',');
        r.wall_s = std::stod(field);
        out.push_back(std::move(r));
    }
    return out;
}

void write_results_csv(const ResultsTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_results_csv: cannot open " + path);
    os << "method,rho,mean_acc,std_err,band,n_seeds\n";
    for (const auto& c : table.cells)
        os << c.method << ',' << fmt("%g", c.rho) << ',' << fmt("%.4f", c.mean_acc) << ','
           << fmt("%.4f", c.std_err) << ',' << (c.band.empty() ? "none" : c.band) << ',' << c.n_seeds
           << '\n';
}

std::string render_results_text(const ResultsTable& table) {
    std::ostringstream os;
    os << "Mean subtask test accuracy (%) over seeds at the validation-selected lambda\n";
    os << "Bands: red [0,50)  orange [50,75)  yellow [75,90)  unmarked [90,100]\n\n";
    os << std::left;
    os.width(12);
    os << "method";
    for (double rho : table.rhos) {
        os.width(22);
        os << ("rho=" + fmt("%g", rho));
    }
    os << "max SE\n";
    size_t idx = 0;
    for (size_t mi = 0; mi < table.methods.size(); ++mi) {
        os.width(12);
        os << table.methods[mi];
        for (size_t ri = 0; ri < table.rhos.size(); ++ri, ++idx) {
            const auto& c = table.cells[idx];
            std::string cell = fmt("%.1f", c.mean_acc) + " +- " + fmt("%.1f", c.std_err);
            if (!c.band.empty()) cell += " (" + c.band + ")";
            os.width(22);
            os << cell;
        }
        os << fmt("%.2f", table.row_max_se[mi]) << '\n';
    }
    if (!table.missing_cells.empty()) {
        os << "\nmissing cells:\n";
        for (const auto& m : table.missing_cells) os << "  " << m << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Teacher acquisition and the sweep
// ---------------------------------------------------------------------------

ConvNet<float> ensure_teacher(const ExperimentConfig& cfg, const ExperimentData& data, bool* trained) {
    fs::path dir = fs::path(cfg.out_dir) / "teacher";
    fs::path file = dir / "teacher.dstl";
    if (trained) *trained = false;
    if (fs::exists(file)) return load_network(Checkpoint::load(file.string()), NetKind::Teacher);

    fs::create_directories(dir);
    ConvNet<float> teacher = build_network<float>(NetKind::Teacher, cfg.teacher_seed);
    TeacherTrainOptions topt;
    topt.lr = static_cast<float>(cfg.lr);
    topt.weight_decay = static_cast<float>(cfg.weight_decay);
    topt.max_epochs = cfg.teacher_epochs;
    topt.patience = cfg.patience;
    topt.batch_size = cfg.batch_size;
    auto res = train_teacher(teacher, data.teacher_train, data.teacher_val, topt, cfg.teacher_seed);
    teacher.set_requires_grad(false);

    Checkpoint ck;
    save_network(teacher, ck);
    ck.save(file.string());

    auto clean_test = build_test_split(cfg, 0.0);
    float clean_acc = evaluate_accuracy(teacher, clean_test, default_subtask_map());
    float artifact_acc = evaluate_accuracy(teacher, data.artifact_test, default_subtask_map());
    std::ofstream ms(dir / "metrics.txt", std::ios::trunc);
    ms << "val_acc_full_task " << fmt("%.4f", res.best_val_acc) << "\n"
       << "clean_subtask_test_acc " << fmt("%.4f", clean_acc) << "\n"
       << "artifact_randomized_test_acc " << fmt("%.4f", artifact_acc) << "\n"
       << "epochs_run " << res.epochs_run << "\n"
       << "param_count " << teacher.param_count() << "\n";
    if (trained) *trained = true;
    return teacher;
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentData data = build_experiment_data(cfg);
    ConvNet<float> teacher = ensure_teacher(cfg, data);
    teacher.set_requires_grad(false);

    fs::create_directories(fs::path(cfg.out_dir) / "subspaces");
    fs::create_directories(fs::path(cfg.out_dir) / "runs");

    std::vector<Method> methods;
    for (const auto& name : cfg.methods) methods.push_back(parse_method(name));
    bool wants_subdistill =
        std::find(methods.begin(), methods.end(), Method::SubDistill) != methods.end();

    int workers = cfg.workers > 0 ? cfg.workers
                                  : std::max(1u, std::thread::hardware_concurrency());

    SweepResult result;
    for (size_t ri = 0; ri < cfg.rhos.size(); ++ri) {
        double rho = cfg.rhos[ri];
        const DatasetSplit& train_full = data.train_by_rho[ri];
        const DatasetSplit& test = data.test_by_rho[ri];
        for (int s = 0; s < cfg.seeds; ++s) {
            auto [train, val] = make_oracle_validation(train_full, oracle_seed(cfg, s));
            TeacherTraceCache trace = build_teacher_trace(teacher, train, default_subtask_map());

            std::array<SubspaceProjector, 4> projs;
            std::array<Tensor<float>, 4> proj_targets;
            if (wants_subdistill) {
                int kl = std::min({cfg.k, 8});
                projs = fit_all_projectors(trace, cfg.k);
                (void)kl;
                proj_targets = project_teacher_rows(trace, projs);
                Checkpoint pck;
                save_projectors(projs, pck);
                pck.save((fs::path(cfg.out_dir) / "subspaces" /
                          ("rho" + std::to_string(rho_pct(rho)) + "_seed" + std::to_string(s) + ".dstl"))
                             .string());
            }
            trace.drop_relevance();

            struct Job {
                Method method;
                std::optional<double> lambda;
                RunRecord record;
                ConvNet<float> student;
            };
            std::vector<Job> jobs;
            for (Method m : methods) {
                if (m == Method::OutputOnly) {
                    jobs.push_back({m, std::nullopt, {}, {}});
                } else {
                    for (double lam : cfg.lambda_grid) jobs.push_back({m, lam, {}, {}});
                }
            }

            std::atomic<size_t> next{0};
            auto work = [&] {
                for (size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
                    StudentRunInputs in;
                    in.cfg = &cfg;
                    in.train = &train;
                    in.val = &val;
                    in.trace = &trace;
                    in.proj_targets = wants_subdistill ? &proj_targets : nullptr;
                    in.projs = wants_subdistill ? &projs : nullptr;
                    in.method = jobs[j].method;
                    in.rho = rho;
                    in.lambda = jobs[j].lambda;
                    in.seed_idx = s;
                    jobs[j].record = train_student(in, jobs[j].student);
                }
            };
            if (workers <= 1) {
                work();
            } else {
                std::vector<std::thread> pool;
                for (int w = 0; w < workers; ++w) pool.emplace_back(work);
                for (auto& th : pool) th.join();
            }

            // Selection first; only then is the test split ever evaluated.
            std::vector<size_t> selected;
            for (Method m : methods) {
                std::vector<size_t> grid_idx;
                std::vector<RunRecord> grid;
                for (size_t j = 0; j < jobs.size(); ++j)
                    if (jobs[j].method == m) {
                        grid_idx.push_back(j);
                        grid.push_back(jobs[j].record);
                    }
                selected.push_back(grid_idx[select_lambda(grid)]);
            }
            for (auto& job : jobs)
                if (!job.record.failed) job.record.test_acc = evaluate_accuracy(job.student, test, {});
            for (size_t mi = 0; mi < methods.size(); ++mi) {
                const Job& job = jobs[selected[mi]];
                Checkpoint ck;
                save_network(job.student, ck);
                ck.save((fs::path(cfg.out_dir) / "runs" /
                         (method_name(methods[mi]) + "_rho" + std::to_string(rho_pct(rho)) + "_seed" +
                          std::to_string(s) + ".dstl"))
                            .string());
            }
            for (const auto& job : jobs) result.records.push_back(job.record);
        }
    }

    write_records_csv(result.records, (fs::path(cfg.out_dir) / "records.csv").string());
    result.table = aggregate(result.records, cfg.methods, cfg.rhos, cfg.seeds);
    write_results_csv(result.table, (fs::path(cfg.out_dir) / "results.csv").string());
    std::ofstream ts(fs::path(cfg.out_dir) / "results.txt", std::ios::trunc);
    ts << render_results_text(result.table);
    result.wall_s =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    return result;
}

}  // namespace distillab
