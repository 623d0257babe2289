#include "distillab/models.hpp"

#include <stdexcept>

#include "distillab/data.hpp"
#include "distillab/optim.hpp"

namespace distillab {

namespace {

template <typename T>
Tensor<T> kaiming_uniform(std::vector<int> shape, int fan_in, Rng rng) {
    T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>((rng.next_double() * 2.0 - 1.0)) * bound;
    return t;
}

}  // namespace

template <typename T>
ConvNet<T> build_network(NetKind kind, uint64_t seed) {
    ConvNet<T> net;
    net.kind = kind;
    Rng root(seed);
    const bool teacher = kind == NetKind::Teacher;
    int c1 = teacher ? 16 : 8, c2 = teacher ? 16 : 8, c3 = teacher ? 32 : 16;
    net.out_classes = teacher ? kFullClasses : kArtifactClasses;
    net.conv1_w = kaiming_uniform<T>({c1, 1, 3, 3}, 1 * 9, root.fork(1));
    net.conv1_b = Tensor<T>::zeros({c1});
    net.conv2_w = kaiming_uniform<T>({c2, c1, 3, 3}, c1 * 9, root.fork(2));
    net.conv2_b = Tensor<T>::zeros({c2});
    net.conv3_w = kaiming_uniform<T>({c3, c2, 3, 3}, c2 * 9, root.fork(3));
    net.conv3_b = Tensor<T>::zeros({c3});
    net.fc_w = kaiming_uniform<T>({net.out_classes, c3}, c3, root.fork(4));
    net.fc_b = Tensor<T>::zeros({net.out_classes});
    return net;
}

template <typename T>
ForwardTrace<T> forward_with_taps(const ConvNet<T>& net, const Tensor<T>& batch) {
    if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != kImageSide || batch.dim(3) != kImageSide)
        throw std::invalid_argument("forward_with_taps: expected [B,1,32,32], got " + shape_str(batch.shape()));
    ForwardTrace<T> tr;
    auto h1 = relu(conv2d(batch, net.conv1_w, net.conv1_b, 1, 1));
    tr.taps[0] = h1;
    auto h2 = relu(conv2d(h1, net.conv2_w, net.conv2_b, 2, 1));
    tr.taps[1] = h2;
    auto h3 = relu(conv2d(h2, net.conv3_w, net.conv3_b, 2, 1));
    tr.taps[2] = h3;
    auto pooled = global_avg_pool(h3);
    tr.taps[3] = pooled;
    tr.logits = affine(pooled, net.fc_w, net.fc_b);
    return tr;
}

template ConvNet<float> build_network<float>(NetKind, uint64_t);
template ConvNet<double> build_network<double>(NetKind, uint64_t);
template ForwardTrace<float> forward_with_taps<float>(const ConvNet<float>&, const Tensor<float>&);
template ForwardTrace<double> forward_with_taps<double>(const ConvNet<double>&, const Tensor<double>&);

void save_network(const ConvNet<float>& net, Checkpoint& ck) {
    for (const auto& [name, t] : net.named_params()) ck.put(name, t);
}

ConvNet<float> load_network(const Checkpoint& ck, NetKind kind) {
    ConvNet<float> net = build_network<float>(kind, 0);
    for (auto [name, t] : net.named_params()) ck.load_into(name, t);
    return net;
}

float evaluate_accuracy(const ConvNet<float>& net, const DatasetSplit& split,
                        const std::vector<int>& g, int batch_size) {
    int n = static_cast<int>(split.samples.size());
    if (n == 0) throw std::invalid_argument("evaluate_accuracy: empty split");
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        std::vector<int> idx(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
        auto batch = batch_pixels(split, idx);
        auto tr = forward_with_taps(net, batch);
        Tensor<float> logits = g.empty() ? tr.logits : subtask_project(tr.logits, g);
        int c = logits.dim(1);
        for (int i = 0; i < b; ++i) {
            const float* row = logits.data() + static_cast<size_t>(i) * c;
            int best = 0;
            for (int j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            if (best == split.samples[static_cast<size_t>(start + i)].class_label) ++correct;
        }
    }
    return 100.0f * static_cast<float>(correct) / static_cast<float>(n);
}

TeacherTrainResult train_teacher(ConvNet<float>& net, const DatasetSplit& train,
                                 const DatasetSplit& val, const TeacherTrainOptions& opt,
                                 uint64_t seed) {
    net.set_requires_grad(true);
    AdamW<float>::Options aopt;
    aopt.lr = opt.lr;
    aopt.weight_decay = opt.weight_decay;
    AdamW<float> optim(net.params(), aopt);
    Rng shuffle_root = Rng(seed).fork(0x5348554646ULL);

    int n = static_cast<int>(train.samples.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    TeacherTrainResult res;
    {
        std::vector<int> idx(order.begin(), order.begin() + std::min(n, 256));
        auto tr = forward_with_taps(net, batch_pixels(train, idx));
        res.init_loss = cross_entropy(tr.logits, batch_labels(train, idx)).item();
    }

    Checkpoint best;
    float best_acc = -1.0f;
    int since_best = 0;
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        optim.set_lr(opt.lr * std::pow(opt.decay_factor, static_cast<float>(epoch / opt.decay_period)));
        Rng sh = shuffle_root.fork(static_cast<uint64_t>(epoch));
        for (int i = n; i > 1; --i) std::swap(order[static_cast<size_t>(i - 1)], order[sh.next_below(static_cast<uint64_t>(i))]);

        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n; start += opt.batch_size) {
            int b = std::min(opt.batch_size, n - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + b);
            Tape<float> tape;
            auto tr = forward_with_taps(net, batch_pixels(train, idx));
            auto loss = cross_entropy(tr.logits, batch_labels(train, idx));
            epoch_loss += loss.item();
            ++steps;
            tape.backward(loss);
            optim.step();
            optim.zero_grad();
        }
        if (epoch == 0) res.first_epoch_loss = static_cast<float>(epoch_loss / steps);

        float acc = evaluate_accuracy(net, val, {}, 256);
        if (acc > best_acc) {
            best_acc = acc;
            since_best = 0;
            best = Checkpoint();
            save_network(net, best);
        } else if (++since_best >= opt.patience) {
            res.epochs_run = epoch + 1;
            break;
        }
        res.epochs_run = epoch + 1;
    }

    for (auto [name, t] : net.named_params()) best.load_into(name, t);
    res.best_val_acc = best_acc;
    if (best_acc < 90.0f)
        throw std::runtime_error("train_teacher: validation accuracy " + std::to_string(best_acc) +
                                 "% below the 90% floor — data or model configuration is broken");
    return res;
}

}  // namespace distillab
