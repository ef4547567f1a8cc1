#include "afn/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace afn {

void TrainConfig::validate() const {
    if (epochs < 1)
        throw std::runtime_error("TrainConfig: epochs must be >= 1");
    if (batch_segments < 1)
        throw std::runtime_error("TrainConfig: batch_segments must be >= 1");
    if (!(lr_initial > 0) || !(lr_reduced > 0))
        throw std::runtime_error("TrainConfig: learning rates must be > 0");
    if (manifest.empty())
        throw std::runtime_error("TrainConfig: dataset manifest is empty");
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.arch = c.get("train.arch", t.arch);
    t.profile = c.get("train.profile", t.profile);
    // desk profile defaults sized for CPU runs
    if (t.profile == "desk") {
        t.epochs = 400;
        t.segment_size = 32;
        t.batch_segments = 2;
        t.checkpoint_every = 0;
    }
    t.epochs = static_cast<int>(c.get_int("train.epochs", t.epochs));
    t.batch_segments =
        static_cast<int>(c.get_int("train.batch_segments", t.batch_segments));
    t.segment_size =
        static_cast<int>(c.get_int("train.segment_size", t.segment_size));
    t.lr_initial = c.get_double("train.lr_initial", t.lr_initial);
    t.lr_reduced = c.get_double("train.lr_reduced", t.lr_reduced);
    t.lr_drop_epoch =
        static_cast<int>(c.get_int("train.lr_drop_epoch", t.lr_drop_epoch));
    t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", 0));
    t.checkpoint_every = static_cast<int>(
        c.get_int("train.checkpoint_every", t.checkpoint_every));
    t.out_dir = c.get("train.out_dir", t.out_dir);
    t.num_input_channels = static_cast<int>(
        c.get_int("train.input_channels", t.num_input_channels));
    t.num_classes =
        static_cast<int>(c.get_int("train.num_classes", t.num_classes));
    t.batchnorm = c.get_bool("train.batchnorm", t.batchnorm);
    t.class_balance = c.get_bool("train.class_balance", t.class_balance);
    t.normalize_volumes = c.get_bool("train.normalize", t.normalize_volumes);
    t.normalize_masked = c.get_bool("train.normalize_masked", t.normalize_masked);
    t.target_loss = c.get_double("train.target_loss", t.target_loss);
    t.max_steps = static_cast<int>(c.get_int("train.max_steps", t.max_steps));
    t.resume = c.get("train.resume", t.resume);
    if (c.has("train.manifest")) {
        t.manifest = read_manifest(c.get("train.manifest"));
    }
    return t;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_reduced;
}

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (const auto& name : params.trainable_names()) {
        auto git = grads.find(name);
        if (git == grads.end())
            throw std::runtime_error("adam_step: missing gradient for " + name);
        const Tensor& g = git->second;
        Tensor& theta = params.get(name);
        if (!theta.same_shape(g))
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            state.m[name] = Tensor::zeros(theta.shape());
            state.v[name] = Tensor::zeros(theta.shape());
            mit = state.m.find(name);
        }
        Tensor& m = mit->second;
        Tensor& v = state.v[name];
        for (std::int64_t i = 0; i < theta.size(); ++i) {
            double gi = g[i];
            if (!std::isfinite(gi))
                throw std::runtime_error("adam_step: non-finite gradient in " +
                                         name);
            m[i] = beta1 * m[i] + (1 - beta1) * gi;
            v[i] = beta2 * v[i] + (1 - beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void save_checkpoint(const Model& m, const AdamState& st, int next_epoch,
                     const std::string& basename) {
    save_weights(m, basename + ".afnw");
    std::vector<std::pair<std::string, Tensor>> recs;
    recs.emplace_back("__step",
                      Tensor::from_values({1}, {static_cast<double>(st.step)}));
    recs.emplace_back("__epoch",
                      Tensor::from_values({1}, {static_cast<double>(next_epoch)}));
    for (const auto& [name, t] : st.m)
        recs.emplace_back(name + ".m", t);
    for (const auto& [name, t] : st.v)
        recs.emplace_back(name + ".v", t);
    save_tensor_records(basename + ".opt", m.arch.hash(), recs);
}

void load_checkpoint(Model& m, AdamState& st, int& next_epoch,
                     const std::string& basename) {
    Model loaded = load_weights(m.arch, basename + ".afnw");
    m.params = std::move(loaded.params);
    st = AdamState{};
    for (auto& [name, t] : load_tensor_records(basename + ".opt", m.arch.hash())) {
        if (name == "__step")
            st.step = static_cast<std::int64_t>(t[0]);
        else if (name == "__epoch")
            next_epoch = static_cast<int>(t[0]);
        else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".m") == 0)
            st.m[name.substr(0, name.size() - 2)] = std::move(t);
        else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0)
            st.v[name.substr(0, name.size() - 2)] = std::move(t);
        else
            throw std::runtime_error("unexpected optimizer record: " + name);
    }
}

namespace {

Tensor batch_images(const std::vector<Segment>& segs) {
    const Tensor& first = segs[0].image;
    Shape shape{static_cast<int>(segs.size()), first.extent(0), first.extent(1),
                first.extent(2), first.extent(3)};
    Tensor out = Tensor::zeros(shape);
    std::int64_t per = first.size();
    for (size_t i = 0; i < segs.size(); ++i)
        for (std::int64_t j = 0; j < per; ++j)
            out[static_cast<std::int64_t>(i) * per + j] = segs[i].image[j];
    return out;
}

Tensor batch_onehot(const std::vector<Segment>& segs, int num_classes) {
    int s = segs[0].labels.depth;
    Shape shape{static_cast<int>(segs.size()), num_classes, s, s, s};
    Tensor out = Tensor::zeros(shape);
    std::int64_t plane = static_cast<std::int64_t>(s) * s * s;
    for (size_t i = 0; i < segs.size(); ++i)
        for (std::int64_t j = 0; j < plane; ++j) {
            int cls = segs[i].labels.labels[static_cast<size_t>(j)];
            out[(static_cast<std::int64_t>(i) * num_classes + cls) * plane + j] =
                1.0;
        }
    return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) +
                      0xbf58476d1ce4e5b9ull * (b + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    return z;
}

} // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    std::vector<VolumeRecord> volumes;
    int num_classes = cfg.num_classes;
    for (const auto& path : cfg.manifest) {
        VolumeRecord v = read_volume(path);
        if (cfg.normalize_volumes)
            normalize(v, cfg.normalize_masked);
        num_classes = std::max(num_classes, v.labels.num_classes);
        if (v.image.extent(0) != cfg.num_input_channels)
            throw std::runtime_error("volume " + path + " has " +
                                     std::to_string(v.image.extent(0)) +
                                     " channels, config expects " +
                                     std::to_string(cfg.num_input_channels));
        volumes.push_back(std::move(v));
    }

    ArchSpec arch = ArchSpec::make(cfg.arch, cfg.profile, cfg.num_input_channels,
                                   num_classes, cfg.batchnorm);
    Model model = build(arch, cfg.seed);
    AdamState opt;
    int start_epoch = 0;
    if (!cfg.resume.empty())
        load_checkpoint(model, opt, start_epoch, cfg.resume);

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream log(cfg.out_dir + "/train_log.jsonl",
                      cfg.resume.empty() ? std::ios::trunc : std::ios::app);
    auto t0 = std::chrono::steady_clock::now();

    TrainResult result;
    int step = static_cast<int>(opt.step);
    bool stop = false;
    double epoch_loss = 0;
    int epoch = start_epoch;
    for (; epoch < cfg.epochs && !stop; ++epoch) {
        double lr = lr_at_epoch(cfg, epoch);
        epoch_loss = 0;
        int epoch_steps = 0;
        for (size_t vi = 0; vi < volumes.size(); ++vi) {
            auto segs = sample_segments(
                volumes[vi], cfg.segment_size, cfg.batch_segments,
                cfg.class_balance,
                mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), vi));
            Tensor images = batch_images(segs);
            Tensor target = batch_onehot(segs, num_classes);

            Graph g(&model.params);
            int x = g.input(std::move(images));
            int logits = model.forward(g, x, /*training=*/true);
            int probs = g.softmax(logits, 1);
            int loss = g.dice_loss(probs, target);
            double loss_val = g.value(loss)[0];
            if (!std::isfinite(loss_val))
                throw std::runtime_error(
                    "train: non-finite loss at step " + std::to_string(step) +
                    " (epoch " + std::to_string(epoch) + ", volume " +
                    volumes[vi].id + ")");
            g.backward(loss);
            adam_step(model.params, g.param_grads(), opt, lr, cfg.beta1,
                      cfg.beta2, cfg.adam_eps);

            double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            log << "{\"epoch\":" << epoch << ",\"step\":" << step
                << ",\"loss\":" << loss_val << ",\"lr\":" << lr
                << ",\"seconds\":" << secs << "}\n";
            epoch_loss += loss_val;
            result.step_losses.push_back(loss_val);
            ++epoch_steps;
            ++step;
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                stop = true;
                break;
            }
        }
        epoch_loss /= std::max(1, epoch_steps);
        log.flush();
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(model, opt, epoch + 1,
                            cfg.out_dir + "/ckpt_epoch" + std::to_string(epoch + 1));
        if (cfg.target_loss > 0 && epoch_loss < cfg.target_loss)
            stop = true;
    }

    save_checkpoint(model, opt, epoch, cfg.out_dir + "/ckpt_final");
    result.model = std::move(model);
    result.steps = step;
    result.epochs_run = epoch - start_epoch;
    result.final_epoch_loss = epoch_loss;
    return result;
}

void refresh_batchnorm_stats(Model& m, const std::vector<VolumeRecord>& volumes,
                             int passes) {
    bool has_bn = false;
    for (const auto& name : m.params.names())
        if (name.size() > 6 && name.compare(name.size() - 6, 6, ".count") == 0)
            has_bn = true;
    if (!has_bn)
        return;
    for (int p = 0; p < passes; ++p)
        for (const auto& v : volumes) {
            v.validate();
            Graph g(&m.params);
            m.forward(g, g.input(v.image), /*training=*/true);
        }
}

namespace {

std::vector<int> window_starts(int extent, int window, int stride) {
    std::vector<int> starts;
    for (int s = 0;; s += stride) {
        if (s + window >= extent) {
            starts.push_back(extent - window);
            break;
        }
        starts.push_back(s);
    }
    return starts;
}

bool has_bn_stats(const Model& m) {
    for (const auto& name : m.params.names())
        if (name.size() > 6 && name.compare(name.size() - 6, 6, ".count") == 0 &&
            m.params.get(name)[0] < 1)
            return false;
    return true;
}

// Averaged full-volume logits via sliding window.
Tensor dense_logits(const Model& m, const VolumeRecord& v, int window,
                    int overlap) {
    v.validate();
    int D = v.labels.depth, H = v.labels.height, W = v.labels.width;
    if (window > D || window > H || window > W)
        throw ShapeError("predict: window exceeds volume extents");
    int stride = std::max(1, window - overlap);
    int num_classes = m.arch.num_classes;
    Tensor logits = Tensor::zeros({num_classes, D, H, W});
    Tensor coverage = Tensor::zeros({D, H, W});
    // fresh models have no batchnorm statistics yet; fall back to batch mode
    bool training_mode = !has_bn_stats(m);

    std::int64_t plane = static_cast<std::int64_t>(D) * H * W;
    int C = v.image.extent(0);
    for (int oz : window_starts(D, window, stride))
        for (int oy : window_starts(H, window, stride))
            for (int ox : window_starts(W, window, stride)) {
                Tensor patch =
                    Tensor::zeros({C, window, window, window});
                std::int64_t o = 0;
                std::int64_t wplane =
                    static_cast<std::int64_t>(window) * window * window;
                for (int z = 0; z < window; ++z)
                    for (int y = 0; y < window; ++y)
                        for (int x = 0; x < window; ++x, ++o) {
                            std::int64_t src =
                                (static_cast<std::int64_t>(oz + z) * H +
                                 (oy + y)) *
                                    W +
                                (ox + x);
                            for (int c = 0; c < C; ++c)
                                patch[c * wplane + o] = v.image[c * plane + src];
                        }
                Graph g(const_cast<ParamStore*>(&m.params));
                int xnode = g.input(std::move(patch));
                int out = m.forward(g, xnode, training_mode);
                const Tensor& wl = g.value(out);
                o = 0;
                for (int z = 0; z < window; ++z)
                    for (int y = 0; y < window; ++y)
                        for (int x = 0; x < window; ++x, ++o) {
                            std::int64_t dst =
                                (static_cast<std::int64_t>(oz + z) * H +
                                 (oy + y)) *
                                    W +
                                (ox + x);
                            coverage[dst] += 1;
                            for (int c = 0; c < num_classes; ++c)
                                logits[c * plane + dst] += wl[c * wplane + o];
                        }
            }
    for (std::int64_t i = 0; i < plane; ++i) {
        if (coverage[i] < 1)
            throw std::runtime_error("predict: window tiling left voxel uncovered");
        for (int c = 0; c < num_classes; ++c)
            logits[c * plane + i] /= coverage[i];
    }
    return logits;
}

} // namespace

LabelVolume predict_labels(const Model& m, const VolumeRecord& v, int window,
                           int overlap) {
    Tensor logits = dense_logits(m, v, window, overlap);
    Tensor am = reduce(Reduce::Argmax, logits, 0);
    LabelVolume out;
    out.depth = v.labels.depth;
    out.height = v.labels.height;
    out.width = v.labels.width;
    out.num_classes = m.arch.num_classes;
    out.labels.resize(static_cast<size_t>(out.size()));
    for (std::int64_t i = 0; i < out.size(); ++i)
        out.labels[static_cast<size_t>(i)] = static_cast<std::uint8_t>(am[i]);
    return out;
}

MetricsReport evaluate(const Model& m, const std::vector<VolumeRecord>& volumes,
                       int window, int overlap) {
    if (volumes.empty())
        throw std::runtime_error("evaluate: empty manifest");
    MetricsReport report;
    for (const auto& v : volumes) {
        LabelVolume pred = predict_labels(m, v, window, overlap);
        LabelVolume target = v.labels;
        target.num_classes = m.arch.num_classes;
        for (int c = 1; c < m.arch.num_classes; ++c)
            report.rows.push_back({v.id, c, dice_score(pred, target, c)});
    }
    return report;
}

std::vector<std::string> export_attention(const Model& m, const VolumeRecord& v,
                                          int layer, const std::string& out_dir) {
    v.validate();
    if (layer < 1 || layer > static_cast<int>(m.arch.layers.size()) ||
        m.arch.layers[static_cast<size_t>(layer - 1)].kind !=
            LayerKind::Autofocus)
        throw std::runtime_error("export_attention: layer " +
                                 std::to_string(layer) +
                                 " is not an autofocus layer");
    Graph g(const_cast<ParamStore*>(&m.params));
    int x = g.input(v.image);
    std::map<int, int> attn;
    m.forward(g, x, /*training=*/!has_bn_stats(m), &attn);
    const Tensor& lambda = g.value(attn.at(layer));
    const auto& rates = m.arch.layers[static_cast<size_t>(layer - 1)].af.rates;

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> paths;
    int K = lambda.extent(0);
    std::int64_t plane = lambda.size() / K;
    for (int k = 0; k < K; ++k) {
        VolumeRecord map;
        map.spacing = v.spacing;
        map.image = Tensor::zeros({1, lambda.extent(1), lambda.extent(2),
                                   lambda.extent(3)});
        for (std::int64_t i = 0; i < plane; ++i)
            map.image[i] = lambda[k * plane + i];
        map.labels.depth = lambda.extent(1);
        map.labels.height = lambda.extent(2);
        map.labels.width = lambda.extent(3);
        map.labels.num_classes = 1;
        map.labels.labels.assign(static_cast<size_t>(plane), 0);
        std::string path = out_dir + "/attention_layer" + std::to_string(layer) +
                           "_rate" + std::to_string(rates[static_cast<size_t>(k)]) +
                           ".afnv";
        write_volume(map, path);
        paths.push_back(path);
    }
    return paths;
}

} // namespace afn
