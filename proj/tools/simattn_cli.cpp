// Command-line front end: dataset generation, training, evaluation,
// attention export, and one-shot segmentation.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "simattn/simattn.hpp"

namespace fs = std::filesystem;
using namespace simattn;

namespace {

void write_manifest(const std::string& path, const KeyValueFile& kv) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    kv.save(path);
}

struct TrainFlags {
    std::string dataset;
    std::string out = "checkpoint.bin";
    std::string log_path;
    std::string arch = "triplet";
    double gamma = 0.2;
    double margin = 0.3;
    double margin2 = 0.15;
    double contrastive_margin = 1.0;
    double lr = 1e-3;
    double mask_alpha = 10.0;
    double mask_beta = 0.5;
    int epochs = 40;
    int batch = 16;
    int val_per_class = 20;
    std::uint64_t seed = 1;
    std::string detach_w = "true";
    std::string optimizer = "adam";
};

int run_train(const TrainFlags& fl) {
    if (!fs::exists(fl.dataset)) {
        std::cerr << "error: dataset not found: " << fl.dataset << "\n";
        return 1;
    }
    Dataset ds = load_dataset(fl.dataset);
    TrainConfig cfg;
    cfg.arch = arch_from_string(fl.arch);
    cfg.gamma = fl.gamma;
    cfg.metric.margin = fl.margin;
    cfg.metric.margin2 = fl.margin2;
    cfg.metric.contrastive_margin = fl.contrastive_margin;
    cfg.mask.alpha = fl.mask_alpha;
    cfg.mask.beta = fl.mask_beta;
    cfg.detach_w = fl.detach_w == "true";
    cfg.lr = fl.lr;
    cfg.optimizer = fl.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    cfg.epochs = fl.epochs;
    cfg.batch = fl.batch;
    cfg.seed = fl.seed;
    cfg.val_per_class = fl.val_per_class;
    cfg.validate();

    Encoder enc(EncoderConfig::desk_default(), cfg.seed);
    std::string log_path = fl.log_path.empty() ? fl.out + ".log" : fl.log_path;
    std::ofstream log(log_path);
    if (!log) {
        std::cerr << "error: cannot open log: " << log_path << "\n";
        return 1;
    }
    auto records = fit(enc, ds, cfg, [&](const EpochRecord& rec, const Encoder& e) {
        log << "epoch=" << rec.epoch << " loss_ml=" << std::setprecision(17) << rec.loss_ml
            << " loss_sm=" << rec.loss_sm << " recall_at_1=" << rec.recall_at_1 << "\n";
        e.save(fl.out);
    });
    if (records.empty()) enc.save(fl.out);
    log.close();

    KeyValueFile mf;
    mf.set("command", std::string("train"));
    mf.set("dataset", fl.dataset);
    mf.set("dataset_hash", file_hash(fl.dataset));
    mf.set("arch", fl.arch);
    mf.set("gamma", fl.gamma);
    mf.set("margin", fl.margin);
    mf.set("margin2", fl.margin2);
    mf.set("contrastive_margin", fl.contrastive_margin);
    mf.set("mask_alpha", fl.mask_alpha);
    mf.set("mask_beta", fl.mask_beta);
    mf.set("detach_w", fl.detach_w);
    mf.set("lr", fl.lr);
    mf.set("optimizer", fl.optimizer);
    mf.set("epochs", static_cast<long>(fl.epochs));
    mf.set("batch", static_cast<long>(fl.batch));
    mf.set("val_per_class", static_cast<long>(fl.val_per_class));
    mf.set("seed", static_cast<long>(fl.seed));
    mf.set("checkpoint", fl.out);
    mf.set("log", log_path);
    write_manifest(fl.out + ".manifest", mf);
    std::cout << "trained " << records.size() << " epochs, checkpoint " << fl.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"similarity attention pipeline"};
    app.require_subcommand(1);

    // --- gen-data -----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    SyntheticSpec spec;
    int per_class = 70;
    std::string gen_out = "dataset.bin";
    gen->add_option("--classes", spec.classes);
    gen->add_option("--per-class", per_class);
    gen->add_option("--image-size", spec.image_size);
    gen->add_option("--glyph-size", spec.glyph_size);
    gen->add_option("--clutter", spec.clutter_blobs);
    gen->add_option("--noise", spec.noise_amplitude);
    gen->add_option("--seed", spec.seed);
    gen->add_option("--out", gen_out);
    gen->callback([&]() {
        Dataset ds = generate(spec, per_class);
        save_dataset(ds, gen_out);
        KeyValueFile mf;
        mf.set("command", std::string("gen-data"));
        mf.set("classes", static_cast<long>(spec.classes));
        mf.set("per_class", static_cast<long>(per_class));
        mf.set("image_size", static_cast<long>(spec.image_size));
        mf.set("glyph_size", static_cast<long>(spec.glyph_size));
        mf.set("clutter", static_cast<long>(spec.clutter_blobs));
        mf.set("noise", spec.noise_amplitude);
        mf.set("seed", static_cast<long>(spec.seed));
        mf.set("out", gen_out);
        mf.set("dataset_hash", file_hash(gen_out));
        write_manifest(gen_out + ".manifest", mf);
        std::cout << "wrote " << ds.samples.size() << " samples (" << spec.classes
                  << " classes) to " << gen_out << "\n";
    });

    // --- train --------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a similarity model");
    TrainFlags tf;
    train->add_option("--dataset", tf.dataset)->required();
    train->add_option("--arch", tf.arch)->check(CLI::IsMember({"siamese", "triplet", "quadruplet"}));
    train->add_option("--gamma", tf.gamma);
    train->add_option("--margin", tf.margin);
    train->add_option("--margin2", tf.margin2);
    train->add_option("--contrastive-margin", tf.contrastive_margin);
    train->add_option("--mask-alpha", tf.mask_alpha);
    train->add_option("--mask-beta", tf.mask_beta);
    train->add_option("--detach-w", tf.detach_w)->check(CLI::IsMember({"true", "false"}));
    train->add_option("--lr", tf.lr);
    train->add_option("--optimizer", tf.optimizer)->check(CLI::IsMember({"sgd", "adam"}));
    train->add_option("--epochs", tf.epochs);
    train->add_option("--batch", tf.batch);
    train->add_option("--val-per-class", tf.val_per_class);
    train->add_option("--seed", tf.seed);
    train->add_option("--out", tf.out);
    train->add_option("--log", tf.log_path);
    int train_rc = 0;
    train->callback([&]() { train_rc = run_train(tf); });

    // --- eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "retrieval + attention metrics");
    std::string ev_ckpt, ev_data, ev_out;
    double ev_quantile = 0.8;
    int ev_threads = 1;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--dataset", ev_data)->required();
    ev->add_option("--quantile", ev_quantile);
    ev->add_option("--threads", ev_threads);
    ev->add_option("--out", ev_out);
    ev->callback([&]() {
        Dataset ds = load_dataset(ev_data);
        EncoderConfig ecfg = EncoderConfig::desk_default();
        ecfg.in_channels = ds.spec.channels;
        ecfg.height = ecfg.width = ds.spec.image_size;
        Encoder enc(ecfg, 0);
        enc.load(ev_ckpt);
        EmbeddedSet set = embed_subset(enc, ds, {}, ev_threads);
        KeyValueFile out;
        for (int K : {1, 2, 4}) out.set("recall_at_" + std::to_string(K), recall_at_k(set, K));
        // attention IoU over triplets drawn from the whole set
        TupleBatch batch = sample_tuples(ds, Arch::triplet, 64, 99);
        double iou_sum = 0.0;
        int n = 0;
        for (const auto& tup : batch.tuples) {
            std::vector<Encoded> encs;
            std::vector<Tensor> fs;
            for (int idx : tup.indices) {
                encs.push_back(enc.encode(ds.samples[idx].image));
                fs.push_back(encs.back().f);
            }
            WeightVector wv = weights(WeightKind::triplet, fs);
            auto scores = sample_scores(wv.w.detach(), fs);
            Tensor m = attention_map(scores[0], encs[0].a, false);
            Tensor up = upsample_bilinear(m, ds.spec.image_size, ds.spec.image_size);
            iou_sum += attention_iou(up.data(), ds.samples[tup.indices[0]].part_mask, ev_quantile);
            ++n;
        }
        out.set("mean_attention_iou", iou_sum / n);
        std::cout << out.str();
        if (!ev_out.empty()) out.save(ev_out);
        KeyValueFile mf;
        mf.set("command", std::string("eval"));
        mf.set("checkpoint", ev_ckpt);
        mf.set("dataset", ev_data);
        mf.set("dataset_hash", file_hash(ev_data));
        mf.set("quantile", ev_quantile);
        mf.set("metrics", out.str().substr(0, out.str().find('\n')));
        std::string mpath = (ev_out.empty() ? ev_ckpt + ".eval" : ev_out) + ".manifest";
        write_manifest(mpath, mf);
    });

    // --- explain ------------------------------------------------------------
    auto* ex = app.add_subcommand("explain", "export attention maps as PGM images");
    std::string ex_ckpt, ex_data, ex_dir = "explain";
    std::vector<int> ex_indices;
    std::string ex_arch = "triplet";
    std::uint64_t ex_seed = 1;
    ex->add_option("--checkpoint", ex_ckpt)->required();
    ex->add_option("--dataset", ex_data)->required();
    ex->add_option("--arch", ex_arch)->check(CLI::IsMember({"siamese", "triplet", "quadruplet"}));
    ex->add_option("--indices", ex_indices, "sample indices forming one tuple");
    ex->add_option("--seed", ex_seed, "seed for tuple sampling when --indices absent");
    ex->add_option("--out-dir", ex_dir);
    ex->callback([&]() {
        Dataset ds = load_dataset(ex_data);
        EncoderConfig ecfg = EncoderConfig::desk_default();
        ecfg.in_channels = ds.spec.channels;
        ecfg.height = ecfg.width = ds.spec.image_size;
        Encoder enc(ecfg, 0);
        enc.load(ex_ckpt);
        Arch arch = arch_from_string(ex_arch);
        std::vector<int> indices = ex_indices;
        bool same_class = true;
        if (indices.empty()) {
            TupleBatch b = sample_tuples(ds, arch, 1, ex_seed);
            indices = b.tuples[0].indices;
            same_class = b.tuples[0].same_class;
        } else {
            if (static_cast<int>(indices.size()) != arch_arity(arch))
                throw std::invalid_argument("explain: index count does not match arch arity");
            for (int i : indices)
                if (i < 0 || i >= static_cast<int>(ds.samples.size()))
                    throw std::invalid_argument("explain: index out of range");
            if (arch == Arch::siamese)
                same_class = ds.samples[indices[0]].label == ds.samples[indices[1]].label;
        }
        std::vector<Encoded> encs;
        std::vector<Tensor> fs;
        for (int idx : indices) {
            encs.push_back(enc.encode(ds.samples[idx].image));
            fs.push_back(encs.back().f);
        }
        WeightKind kind =
            arch == Arch::siamese
                ? (same_class ? WeightKind::siamese_same : WeightKind::siamese_diff)
                : (arch == Arch::triplet ? WeightKind::triplet : WeightKind::quadruplet);
        WeightVector wv = weights(kind, fs);
        auto scores = sample_scores(wv.w.detach(), fs);
        fs::create_directories(ex_dir);
        KeyValueFile side;
        side.set("arch", ex_arch);
        double wmin = wv.w[0], wmax = wv.w[0], wsum = 0.0;
        for (int i = 0; i < wv.w.size(); ++i) {
            wmin = std::min(wmin, wv.w[i]);
            wmax = std::max(wmax, wv.w[i]);
            wsum += wv.w[i];
        }
        side.set("w_min", wmin);
        side.set("w_max", wmax);
        side.set("w_mean", wsum / wv.w.size());
        for (size_t i = 0; i < indices.size(); ++i) {
            Tensor m = attention_map(scores[i], encs[i].a, false);
            double mx = *std::max_element(m.data().begin(), m.data().end());
            Tensor norm = mx > 0 ? scale(m, 1.0 / mx) : m;
            Tensor up = upsample_bilinear(norm, ds.spec.image_size, ds.spec.image_size);
            std::string base = "attention_" + std::to_string(i) + ".pgm";
            std::string name = ex_dir + "/" + base;
            write_pgm(name, up.data(), ds.spec.image_size, ds.spec.image_size);
            side.set("sample_" + std::to_string(i) + "_index", static_cast<long>(indices[i]));
            side.set("sample_" + std::to_string(i) + "_label",
                     static_cast<long>(ds.samples[indices[i]].label));
            side.set("score_" + std::to_string(i), scores[i].item());
            side.set("map_" + std::to_string(i), base);  // relative to the sidecar
        }
        side.save(ex_dir + "/scores.txt");
        KeyValueFile mf;
        mf.set("command", std::string("explain"));
        mf.set("checkpoint", ex_ckpt);
        mf.set("dataset", ex_data);
        mf.set("dataset_hash", file_hash(ex_data));
        mf.set("arch", ex_arch);
        std::string idx_str;
        for (int i : indices) idx_str += (idx_str.empty() ? "" : ",") + std::to_string(i);
        mf.set("indices", idx_str);
        mf.set("out_dir", ex_dir);
        write_manifest(ex_dir + "/manifest.txt", mf);
        std::cout << "wrote " << indices.size() << " attention maps to " << ex_dir << "\n";
    });

    // --- segment ------------------------------------------------------------
    auto* seg = app.add_subcommand("segment", "one-shot segmentation from attention");
    std::string seg_ckpt, seg_data, seg_out;
    int seg_pairs = 100;
    std::uint64_t seg_seed = 1;
    double seg_quantile = 0.8;
    seg->add_option("--checkpoint", seg_ckpt)->required();
    seg->add_option("--dataset", seg_data)->required();
    seg->add_option("--pairs", seg_pairs);
    seg->add_option("--seed", seg_seed);
    seg->add_option("--quantile", seg_quantile);
    seg->add_option("--out", seg_out);
    seg->callback([&]() {
        Dataset ds = load_dataset(seg_data);
        EncoderConfig ecfg = EncoderConfig::desk_default();
        ecfg.in_channels = ds.spec.channels;
        ecfg.height = ecfg.width = ds.spec.image_size;
        Encoder enc(ecfg, 0);
        enc.load(seg_ckpt);
        Rng rng(seg_seed);
        std::vector<std::vector<int>> by_class(ds.spec.classes);
        for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
            by_class[ds.samples[i].label - 1].push_back(i);
        std::vector<double> class_sum(ds.spec.classes, 0.0);
        std::vector<int> class_n(ds.spec.classes, 0);
        double total = 0.0;
        for (int p = 0; p < seg_pairs; ++p) {
            int cls = rng.uniform_int(ds.spec.classes);
            int t = by_class[cls][rng.uniform_int(static_cast<int>(by_class[cls].size()))];
            int s;
            do {
                s = by_class[cls][rng.uniform_int(static_cast<int>(by_class[cls].size()))];
            } while (s == t);
            auto res = one_shot_segment(enc, ds.samples[t], ds.samples[s], seg_quantile);
            class_sum[cls] += res.iou;
            class_n[cls] += 1;
            total += res.iou;
        }
        KeyValueFile out;
        for (int c = 0; c < ds.spec.classes; ++c)
            if (class_n[c] > 0)
                out.set("mean_iou_class_" + std::to_string(c + 1), class_sum[c] / class_n[c]);
        out.set("mean_iou", total / seg_pairs);
        std::cout << out.str();
        if (!seg_out.empty()) out.save(seg_out);
        KeyValueFile mf;
        mf.set("command", std::string("segment"));
        mf.set("checkpoint", seg_ckpt);
        mf.set("dataset", seg_data);
        mf.set("dataset_hash", file_hash(seg_data));
        mf.set("pairs", static_cast<long>(seg_pairs));
        mf.set("seed", static_cast<long>(seg_seed));
        mf.set("quantile", seg_quantile);
        mf.set("mean_iou", total / seg_pairs);
        std::string mpath = (seg_out.empty() ? seg_ckpt + ".segment" : seg_out) + ".manifest";
        write_manifest(mpath, mf);
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return train_rc;
}
