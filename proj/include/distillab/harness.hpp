#pragma once

// Experiment orchestration: dataset construction per contamination rate, the
// oracle-validation split, teacher trace caching, student training runs, the
// λ grid search, the full sweep, and Table-style aggregation.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distillab/data.hpp"
#include "distillab/distill.hpp"
#include "distillab/models.hpp"

namespace distillab {

struct ExperimentConfig {
    std::string out_dir = "exp";

    uint64_t data_seed = 1234;
    uint64_t teacher_seed = 7;
    int n_train = 2500;
    int n_test = 1000;
    int n_teacher_train = 4000;
    int n_teacher_val = 500;
    double sigma_noise = kDefaultSigmaNoise;

    std::vector<double> rhos = {0.0, 0.5, 1.0};
    std::vector<double> lambda_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
    std::vector<std::string> methods = {"OutputOnly", "AT", "VID", "VKD", "SubDistill"};
    int seeds = 3;

    int epochs = 40;
    int decay_period = 10;
    double lr = 1e-3;
    double decay_factor = 0.5;
    double weight_decay = 0.01;
    double tau = 2.0;
    int k = 8;
    int batch_size = 64;
    int patience = 10;
    int teacher_epochs = 60;
    bool paper_protocol = false;  // restores the 100-epoch / decay-25 protocol

    int workers = 0;  // 0 = hardware concurrency

    // single-run selectors (distill / fit-subspaces / analyze)
    std::string method = "SubDistill";
    double rho = 1.0;
    double lambda = 1.0;
    int seed = 0;

    // analysis knobs
    int tsne_n = 1000;
    double tsne_perplexity = 30.0;
    int occlusion_n = 200;
};

struct RunRecord {
    std::string method;
    double rho = 0.0;
    std::optional<double> lambda;  // absent for OutputOnly
    int seed = 0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    int epoch_stopped = 0;
    double wall_s = 0.0;
    bool failed = false;  // non-finite loss: recorded with accuracy 0
};

struct ResultCell {
    std::string method;
    double rho = 0.0;
    double mean_acc = 0.0;
    double std_err = 0.0;
    std::string band;  // "red" | "orange" | "yellow" | ""
    int n_seeds = 0;
};

struct ResultsTable {
    std::vector<ResultCell> cells;           // method-major, then ρ ascending
    std::vector<std::string> methods;        // row order
    std::vector<double> rhos;                // column order
    std::vector<double> row_max_se;          // per method
    std::vector<std::string> missing_cells;  // reported, never dropped silently
};

// ---- dataset plumbing ----

struct ExperimentData {
    DatasetSplit teacher_train;  // clean, full task
    DatasetSplit teacher_val;    // clean, full task
    DatasetSplit artifact_test;  // subtask, every image stamped randomly
    std::vector<DatasetSplit> train_by_rho;  // Correlated at each ρ
    std::vector<DatasetSplit> test_by_rho;   // Random at each ρ
};

ExperimentData build_experiment_data(const ExperimentConfig& cfg);
DatasetSplit build_train_split(const ExperimentConfig& cfg, double rho);
DatasetSplit build_test_split(const ExperimentConfig& cfg, double rho);

uint64_t oracle_seed(const ExperimentConfig& cfg, int seed_idx);
uint64_t run_seed(const ExperimentConfig& cfg, int seed_idx);

// ---- teacher trace cache ----

struct TeacherTraceCache {
    Tensor<float> logits;                     // [N, C]
    std::array<Tensor<float>, 4> rows;        // channel-last rows per tap
    std::array<Tensor<float>, 4> rel_rows;    // relevance rows (for fitting)
    std::array<int, 4> hw = {32 * 32, 16 * 16, 8 * 8, 1};
    int n = 0;

    void drop_relevance();  // free the fitting-only buffers
};

TeacherTraceCache build_teacher_trace(const ConvNet<float>& teacher, const DatasetSplit& split,
                                      const std::vector<int>& g, int batch_size = 125);

// Fit all four projectors from a cache that still holds relevance rows.
std::array<SubspaceProjector, 4> fit_all_projectors(const TeacherTraceCache& trace, int k);

// Uᵀ(rows − μ) for every cached row, per tap.
std::array<Tensor<float>, 4> project_teacher_rows(const TeacherTraceCache& trace,
                                                  const std::array<SubspaceProjector, 4>& projs);

// ---- student training ----

struct StudentRunInputs {
    const ExperimentConfig* cfg = nullptr;
    const DatasetSplit* train = nullptr;  // 80% split, Correlated
    const DatasetSplit* val = nullptr;    // oracle 20%, Random
    const TeacherTraceCache* trace = nullptr;
    const std::array<Tensor<float>, 4>* proj_targets = nullptr;    // SubDistill
    const std::array<SubspaceProjector, 4>* projs = nullptr;       // SubDistill
    Method method = Method::OutputOnly;
    double rho = 0.0;
    std::optional<double> lambda;
    int seed_idx = 0;
};

// One full training run: AdamW + step decay, per-epoch validation, early
// stopping, best-checkpoint restore.  Never touches the test split.
RunRecord train_student(const StudentRunInputs& in, ConvNet<float>& student_out);

// argmax of validation accuracy, ties toward the smaller λ; index into grid.
size_t select_lambda(const std::vector<RunRecord>& records);

ResultsTable aggregate(const std::vector<RunRecord>& records, const std::vector<std::string>& methods,
                       const std::vector<double>& rhos, int seeds);

std::string severity_band(double mean_acc);

// ---- persistence ----

void write_records_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> read_records_csv(const std::string& path);
void write_results_csv(const ResultsTable& table, const std::string& path);
std::string render_results_text(const ResultsTable& table);

// ---- the sweep ----

struct SweepResult {
    std::vector<RunRecord> records;
    ResultsTable table;
    double wall_s = 0.0;
};

// Full factorial methods × ρ × grid × seeds with a worker pool; reuses the
// teacher checkpoint under out_dir (training it if absent), writes records,
// results, projector files, and selected student checkpoints.
SweepResult run_sweep(const ExperimentConfig& cfg);

// Teacher acquisition shared by sweep/CLI: loads out_dir/teacher/teacher.dstl
// or trains and persists it (plus metrics.txt).
ConvNet<float> ensure_teacher(const ExperimentConfig& cfg, const ExperimentData& data, bool* trained = nullptr);

}  // namespace distillab
