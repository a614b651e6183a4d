#include "snag/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "snag/checkpoint.hpp"
#include "snag/config.hpp"
#include "snag/encoders.hpp"
#include "snag/eval.hpp"
#include "snag/kgc.hpp"
#include "snag/mmea.hpp"

namespace snag {

namespace {

namespace fs = std::filesystem;

struct CliArgs {
    std::string sub;
    std::string config_path;
    std::string out_dir;
    bool iterative = false;
};

CliArgs parse_args(const std::vector<std::string>& args) {
    if (args.empty())
        throw std::invalid_argument(
            "usage: snag <gen|train-kgc|train-ea|eval-kgc|eval-ea|ablate> "
            "--config <file> --out <dir> [--iterative]");
    CliArgs a;
    a.sub = args[0];
    for (size_t i = 1; i < args.size(); ++i) {
        const std::string& f = args[i];
        auto next = [&]() -> const std::string& {
            if (i + 1 >= args.size())
                throw std::invalid_argument("flag " + f + " wants a value");
            return args[++i];
        };
        if (f == "--config")
            a.config_path = next();
        else if (f == "--out")
            a.out_dir = next();
        else if (f == "--iterative")
            a.iterative = true;
        else
            throw std::invalid_argument("unknown flag: " + f);
    }
    if (a.config_path.empty())
        throw std::invalid_argument("missing --config <file>");
    if (a.out_dir.empty()) throw std::invalid_argument("missing --out <dir>");
    return a;
}

std::string fmt(Scalar v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_manifest(const std::string& out_dir, const std::string& sub,
                    const Config& cfg) {
    std::string m;
    m += "# snag manifest\n";
    m += std::string("# version ") + kVersion + "\n";
    m += "# subcommand " + sub + "\n";
    m += cfg.echo();
    write_text(out_dir + "/manifest.txt", m);
}

// ---- config -> module settings ----------------------------------------

NoiseConfig noise_from(const Config& c, NoiseConfig n) {
    std::string mode = c.get_string("gmnm.mode", "gmnm");
    if (mode == "gmnm")
        n.mode = NoiseMode::gmnm;
    else if (mode == "dropout")
        n.mode = NoiseMode::dropout;
    else if (mode == "off")
        n.mode = NoiseMode::off;
    else
        throw std::invalid_argument(
            "gmnm.mode wants gmnm, dropout or off, got `" + mode + "`");
    n.rho = c.get_scalar("gmnm.rho", n.rho);
    n.epsilon = c.get_scalar("gmnm.epsilon", n.epsilon);
    n.dropout_p = c.get_scalar("gmnm.dropout_p", n.dropout_p);
    n.dropout_inverted =
        c.get_bool("gmnm.dropout_inverted", n.dropout_inverted);
    n.modalities = c.get_modalities("gmnm.modalities", n.modalities);
    return n;
}

KgcConfig kgc_config_from(const Config& c) {
    KgcConfig k;
    k.d = static_cast<int>(c.get_int("kgc.d", k.d));
    k.margin = c.get_scalar("kgc.margin", k.margin);
    k.negatives = static_cast<int>(c.get_int("kgc.negatives", k.negatives));
    k.tau = c.get_scalar("kgc.tau", k.tau);
    k.batch_size =
        static_cast<int>(c.get_int("kgc.batch_size", k.batch_size));
    k.lr = c.get_scalar("kgc.lr", k.lr);
    k.epochs = static_cast<int>(c.get_int("kgc.epochs", k.epochs));
    k.l2_score = c.get_bool("kgc.l2_score", k.l2_score);
    k.detach_adversarial =
        c.get_bool("kgc.detach_adversarial", k.detach_adversarial);
    k.mean_fused = c.get_bool("kgc.mean_fused", k.mean_fused);
    k.eval_every = static_cast<int>(c.get_int("kgc.eval_every", k.eval_every));
    k.heads = static_cast<int>(c.get_int("fusion.heads", k.heads));
    k.ffn_dim = static_cast<int>(c.get_int("fusion.ffn_dim", k.ffn_dim));
    k.variant = parse_fusion_variant(c.get_string("fusion.variant", "full"));
    k.noise = noise_from(c, k.noise);
    return k;
}

MmeaConfig mmea_config_from(const Config& c, bool iterative_flag) {
    MmeaConfig m;
    m.d = static_cast<int>(c.get_int("ea.d", m.d));
    m.tau = c.get_scalar("ea.tau", m.tau);
    m.lr = c.get_scalar("ea.lr", m.lr);
    m.weight_decay = c.get_scalar("ea.weight_decay", m.weight_decay);
    m.batch_size = static_cast<int>(c.get_int("ea.batch_size", m.batch_size));
    m.epochs = static_cast<int>(c.get_int("ea.epochs", m.epochs));
    m.warmup_frac = c.get_scalar("ea.warmup_frac", m.warmup_frac);
    m.probe_every =
        static_cast<int>(c.get_int("ea.probe_every", m.probe_every));
    m.promote_after =
        static_cast<int>(c.get_int("ea.promote_after", m.promote_after));
    m.iterative = c.get_bool("ea.iterative", m.iterative) || iterative_flag;
    m.normalize = c.get_bool("ea.normalize", m.normalize);
    m.detach_confidence =
        c.get_bool("ea.detach_confidence", m.detach_confidence);
    m.heads = static_cast<int>(c.get_int("fusion.heads", m.heads));
    m.ffn_dim = static_cast<int>(c.get_int("fusion.ffn_dim", m.ffn_dim));
    m.gat_layers = static_cast<int>(c.get_int("ea.gat_layers", m.gat_layers));
    m.gat_heads = static_cast<int>(c.get_int("ea.gat_heads", m.gat_heads));
    m.eval_every = static_cast<int>(c.get_int("ea.eval_every", m.eval_every));
    m.patience = static_cast<int>(c.get_int("ea.patience", m.patience));
    m.valid_frac = c.get_scalar("ea.valid_frac", m.valid_frac);
    m.noise = noise_from(c, m.noise);
    return m;
}

SynthSpec synth_from(const Config& c) {
    SynthSpec sp;
    sp.num_entities =
        static_cast<int>(c.get_int("synth.entities", sp.num_entities));
    sp.num_relations =
        static_cast<int>(c.get_int("synth.relations", sp.num_relations));
    sp.num_clusters =
        static_cast<int>(c.get_int("synth.clusters", sp.num_clusters));
    sp.d_v = static_cast<int>(c.get_int("synth.d_v", sp.d_v));
    sp.d_s = static_cast<int>(c.get_int("synth.d_s", sp.d_s));
    sp.r_img = c.get_scalar("synth.r_img", sp.r_img);
    sp.r_sa = c.get_scalar("synth.r_sa", sp.r_sa);
    sp.jitter = c.get_scalar("synth.jitter", sp.jitter);
    sp.valid_frac = c.get_scalar("synth.valid_frac", sp.valid_frac);
    sp.test_frac = c.get_scalar("synth.test_frac", sp.test_frac);
    sp.attrs_per_entity = static_cast<int>(
        c.get_int("synth.attrs_per_entity", sp.attrs_per_entity));
    sp.num_attr_keys =
        static_cast<int>(c.get_int("synth.attr_keys", sp.num_attr_keys));
    return sp;
}

// ---- dataset intake ----------------------------------------------------

// Feature files carry presence only in CSV form, so gen emits .csv when any
// row is absent and .mmft otherwise; loading checks both names.
ModalityFeatureStore load_feature_file(const std::string& dir, char tag,
                                       Modality m, const KnowledgeGraph& kg) {
    std::string base = dir + "/" + std::string(1, tag);
    if (fs::exists(base + ".mmft"))
        return load_features(base + ".mmft", m, kg.num_entities(),
                             &kg.entities);
    if (fs::exists(base + ".csv"))
        return load_features(base + ".csv", m, kg.num_entities(),
                             &kg.entities);
    throw std::runtime_error("no feature file " + base + ".{mmft,csv}");
}

struct KgcData {
    KnowledgeGraph kg;
    ModalityFeatureStore v, s;
};

KgcData load_kgc_data(const Config& c, uint64_t seed) {
    KgcData d;
    if (c.has("data.dir")) {
        std::string dir = c.require_string("data.dir") + "/g1";
        d.kg = load_triples(dir);
        d.v = load_feature_file(dir, 'v', Modality::v, d.kg);
        d.s = load_feature_file(dir, 's', Modality::s, d.kg);
    } else {
        SyntheticData sd = generate_synthetic(synth_from(c), seed);
        d.kg = std::move(sd.g1);
        d.v = std::move(sd.v1);
        d.s = std::move(sd.s1);
    }
    impute_missing(d.v, seed);
    impute_missing(d.s, seed);
    return d;
}

struct EaData {
    KnowledgeGraph g1, g2;
    ModalityInputs in1, in2;
    AlignmentSet alignment;
};

EaData load_ea_data(const Config& c, uint64_t seed) {
    EaData d;
    AttributeSet attrs1, attrs2;
    if (c.has("data.dir")) {
        std::string root = c.require_string("data.dir");
        d.g1 = load_triples(root + "/g1");
        d.g2 = load_triples(root + "/g2");
        d.in1.v = load_feature_file(root + "/g1", 'v', Modality::v, d.g1);
        d.in1.s = load_feature_file(root + "/g1", 's', Modality::s, d.g1);
        d.in2.v = load_feature_file(root + "/g2", 'v', Modality::v, d.g2);
        d.in2.s = load_feature_file(root + "/g2", 's', Modality::s, d.g2);
        attrs1 = load_attributes(root + "/g1/attrs.tsv", d.g1.entities);
        attrs2 = load_attributes(root + "/g2/attrs.tsv", d.g2.entities);
        d.alignment.seed = load_alignment(root + "/alignment/seed.tsv",
                                          d.g1.entities, d.g2.entities);
        d.alignment.test = load_alignment(root + "/alignment/test.tsv",
                                          d.g1.entities, d.g2.entities);
    } else {
        SyntheticData sd = generate_synthetic(synth_from(c), seed);
        d.g1 = std::move(sd.g1);
        d.g2 = std::move(sd.g2);
        d.in1.v = std::move(sd.v1);
        d.in1.s = std::move(sd.s1);
        d.in2.v = std::move(sd.v2);
        d.in2.s = std::move(sd.s2);
        attrs1 = std::move(sd.attrs1);
        attrs2 = std::move(sd.attrs2);
        d.alignment = std::move(sd.alignment);
    }
    int d_r = static_cast<int>(c.get_int("data.d_r", 1000));
    int d_a = static_cast<int>(c.get_int("data.d_a", 1000));
    bool swap = c.get_bool("data.swap_bow", false);
    auto [r1, a1] = build_bow_features(d.g1, attrs1, d_r, d_a, swap);
    auto [r2, a2] = build_bow_features(d.g2, attrs2, d_r, d_a, swap);
    d.in1.r = std::move(r1);
    d.in1.a = std::move(a1);
    d.in2.r = std::move(r2);
    d.in2.a = std::move(a2);
    impute_missing(d.in1.v, seed);
    impute_missing(d.in1.s, seed);
    impute_missing(d.in2.v, seed + 1);
    impute_missing(d.in2.s, seed + 1);
    return d;
}

// ---- report helpers ----------------------------------------------------

std::string metrics_csv(const RankResult& r) {
    std::string out = "metric,value\n";
    out += "mrr," + fmt(r.mrr) + "\n";
    out += "hits1," + fmt(r.hits1) + "\n";
    out += "hits3," + fmt(r.hits3) + "\n";
    out += "hits10," + fmt(r.hits10) + "\n";
    out += "mean_rank," + fmt(r.mean_rank) + "\n";
    out += "queries," + fmt(static_cast<Scalar>(r.ranks.size())) + "\n";
    return out;
}

std::string metrics_table(const RankResult& r) {
    char buf[256];
    std::string out;
    out += "metric       value\n";
    auto row = [&](const char* name, Scalar v) {
        std::snprintf(buf, sizeof(buf), "%-10s %9.4f\n", name, v);
        out += buf;
    };
    row("MRR", r.mrr);
    row("Hits@1", r.hits1);
    row("Hits@3", r.hits3);
    row("Hits@10", r.hits10);
    row("MeanRank", r.mean_rank);
    std::snprintf(buf, sizeof(buf), "%-10s %9zu\n", "queries",
                  r.ranks.size());
    out += buf;
    return out;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    throw std::invalid_argument(
        "eval.split wants train, valid or test, got `" + s + "`");
}

// ---- subcommands -------------------------------------------------------

void cmd_gen(const CliArgs& a, Config& cfg, uint64_t seed) {
    SyntheticData sd = generate_synthetic(synth_from(cfg), seed);
    fs::create_directories(a.out_dir + "/g1");
    fs::create_directories(a.out_dir + "/g2");
    fs::create_directories(a.out_dir + "/alignment");

    auto dump_graph = [&](const KnowledgeGraph& kg, const AttributeSet& at,
                          const ModalityFeatureStore& v,
                          const ModalityFeatureStore& s,
                          const std::string& dir) {
        for (Split sp : {Split::train, Split::valid, Split::test})
            write_triples_file(kg, sp,
                               dir + "/" + split_name(sp) + ".tsv");
        write_attributes(at, kg.entities, dir + "/attrs.tsv");
        for (const ModalityFeatureStore* st : {&v, &s}) {
            std::string base =
                dir + "/" + std::string(1, modality_tag(st->tag));
            if (st->num_present() == st->rows)
                write_features(*st, base + ".mmft");
            else
                write_features_csv(*st, kg.entities, base + ".csv");
        }
    };
    dump_graph(sd.g1, sd.attrs1, sd.v1, sd.s1, a.out_dir + "/g1");
    dump_graph(sd.g2, sd.attrs2, sd.v2, sd.s2, a.out_dir + "/g2");
    write_alignment(sd.alignment.seed, sd.g1.entities, sd.g2.entities,
                    a.out_dir + "/alignment/seed.tsv");
    write_alignment(sd.alignment.test, sd.g1.entities, sd.g2.entities,
                    a.out_dir + "/alignment/test.tsv");
    write_alignment(sd.pairs, sd.g1.entities, sd.g2.entities,
                    a.out_dir + "/alignment/full.tsv");
    std::cout << "gen: |E|=" << sd.g1.num_entities()
              << " |R|=" << sd.g1.num_relations()
              << " train=" << sd.g1.train.size()
              << " valid=" << sd.g1.valid.size()
              << " test=" << sd.g1.test.size()
              << " seeds=" << sd.alignment.seed.size()
              << " held-out=" << sd.alignment.test.size() << "\n";
}

void cmd_train_kgc(const CliArgs& a, Config& cfg, uint64_t seed) {
    KgcData d = load_kgc_data(cfg, seed);
    KgcConfig kc = kgc_config_from(cfg);
    KgcModel model = make_kgc_model(d.kg, d.v, d.s, kc, seed);
    KgcTrainResult res = train_kgc(model, d.kg);

    std::string loss = "epoch,loss\n";
    for (size_t i = 0; i < res.epoch_loss.size(); ++i)
        loss += std::to_string(i) + "," + fmt(res.epoch_loss[i]) + "\n";
    write_text(a.out_dir + "/loss.csv", loss);
    if (!res.val_mrr.empty()) {
        std::string v = "epoch,val_mrr\n";
        for (const auto& [ep, mrr] : res.val_mrr)
            v += std::to_string(ep) + "," + fmt(mrr) + "\n";
        write_text(a.out_dir + "/val_mrr.csv", v);
    }
    save_checkpoint(a.out_dir + "/checkpoint.snck", model.params,
                    cfg.echo());
    std::cout << "train-kgc: " << res.epoch_loss.size()
              << " epochs, final loss " << fmt(res.epoch_loss.back())
              << "\n";
}

void cmd_train_ea(const CliArgs& a, Config& cfg, uint64_t seed) {
    EaData d = load_ea_data(cfg, seed);
    MmeaConfig mc = mmea_config_from(cfg, a.iterative);
    if (a.iterative) cfg.set("ea.iterative", "true");  // manifest truth
    MmeaModel model =
        make_mmea_model(d.g1, d.g2, d.in1, d.in2, mc, seed);
    MmeaTrainResult res = train_mmea(model, d.alignment);

    std::string loss = "epoch,loss,gmi,ecia,iir\n";
    for (size_t i = 0; i < res.epoch_loss.size(); ++i)
        loss += std::to_string(i) + "," + fmt(res.epoch_loss[i]) + "," +
                fmt(res.parts[i][0]) + "," + fmt(res.parts[i][1]) + "," +
                fmt(res.parts[i][2]) + "\n";
    write_text(a.out_dir + "/loss.csv", loss);
    if (!res.test_hits1.empty()) {
        std::string h = "epoch,test_hits1\n";
        for (const auto& [ep, v] : res.test_hits1)
            h += std::to_string(ep) + "," + fmt(v) + "\n";
        write_text(a.out_dir + "/test_hits1.csv", h);
    }
    if (!res.valid_hits1.empty()) {
        std::string h = "epoch,valid_hits1\n";
        for (const auto& [ep, v] : res.valid_hits1)
            h += std::to_string(ep) + "," + fmt(v) + "\n";
        write_text(a.out_dir + "/valid_hits1.csv", h);
    }
    std::string promo = "epoch\te1\te2\n";
    for (const Promotion& p : res.promotions)
        promo += std::to_string(p.epoch) + "\t" +
                 d.g1.entities.name(p.e1) + "\t" + d.g2.entities.name(p.e2) +
                 "\n";
    write_text(a.out_dir + "/promotions.tsv", promo);
    save_checkpoint(a.out_dir + "/checkpoint.snck", model.params,
                    cfg.echo());
    std::cout << "train-ea: " << res.epoch_loss.size()
              << " epochs, final loss " << fmt(res.epoch_loss.back())
              << ", promotions " << res.promotions.size() << "\n";
}

void cmd_eval_kgc(const CliArgs& a, Config& cfg, uint64_t seed) {
    KgcData d = load_kgc_data(cfg, seed);
    KgcConfig kc = kgc_config_from(cfg);
    KgcModel model = make_kgc_model(d.kg, d.v, d.s, kc, seed);
    restore_checkpoint(model.params,
                       load_checkpoint(cfg.require_string("eval.checkpoint")));
    NoGradGuard ng;
    Tensor reprs = kgc_entity_reprs(model, 0, /*train_mode=*/false);
    KgcEvalOptions opt;
    opt.split = parse_split(cfg.get_string("eval.split", "test"));
    opt.filtered = cfg.get_bool("eval.filtered", true);
    opt.l2_score = kc.l2_score;
    RankResult r = eval_kgc(reprs, model.phases, d.kg, opt);
    write_text(a.out_dir + "/metrics.csv", metrics_csv(r));
    write_text(a.out_dir + "/metrics.txt", metrics_table(r));
    std::cout << metrics_table(r);
}

void cmd_eval_ea(const CliArgs& a, Config& cfg, uint64_t seed) {
    EaData d = load_ea_data(cfg, seed);
    MmeaConfig mc = mmea_config_from(cfg, false);
    MmeaModel model =
        make_mmea_model(d.g1, d.g2, d.in1, d.in2, mc, seed);
    restore_checkpoint(model.params,
                       load_checkpoint(cfg.require_string("eval.checkpoint")));
    auto [emb1, emb2] = mmea_inference_embeddings(model);
    EaEvalOptions opt;
    opt.full_pool = cfg.get_bool("eval.full_pool", false);
    opt.normalize = mc.normalize;
    RankResult r = eval_ea(emb1, emb2, d.alignment.test, opt);
    write_text(a.out_dir + "/metrics.csv", metrics_csv(r));
    write_text(a.out_dir + "/metrics.txt", metrics_table(r));
    std::cout << metrics_table(r);
}

void cmd_ablate(const CliArgs& a, Config& cfg, uint64_t seed) {
    KgcData d = load_kgc_data(cfg, seed);
    KgcConfig base = kgc_config_from(cfg);
    int seeds = static_cast<int>(cfg.get_int("ablate.seeds", 1));
    if (seeds < 1) throw std::invalid_argument("ablate.seeds must be >= 1");

    struct Row {
        std::string label;
        KgcConfig kc;
    };
    std::vector<Row> rows;
    const std::pair<Scalar, Scalar> grid[] = {{0.2, 0.7}, {0.3, 0.6},
                                              {0.1, 0.8}, {0.4, 0.4},
                                              {0.5, 0.2}, {0.7, 0.2}};
    for (const auto& [rho, eps] : grid) {
        KgcConfig k = base;
        k.noise.mode = NoiseMode::gmnm;
        k.noise.rho = rho;
        k.noise.epsilon = eps;
        rows.push_back({"gmnm_rho" + fmt(rho) + "_eps" + fmt(eps), k});
    }
    {
        KgcConfig k = base;
        k.noise.mode = NoiseMode::off;
        rows.push_back({"noise_off", k});
    }
    for (Scalar p : {0.1, 0.2, 0.3, 0.4}) {
        KgcConfig k = base;
        k.noise.mode = NoiseMode::dropout;
        k.noise.dropout_p = p;
        rows.push_back({"dropout_p" + fmt(p), k});
    }
    for (FusionVariant v :
         {FusionVariant::full, FusionVariant::fc, FusionVariant::ws,
          FusionVariant::at, FusionVariant::ts, FusionVariant::only_g}) {
        KgcConfig k = base;
        k.variant = v;
        rows.push_back({std::string("variant_") + fusion_variant_name(v), k});
    }

    std::string csv = "label,mrr,hits1,hits3,hits10\n";
    std::string table = "label                       mrr   hits@1   hits@3  hits@10\n";
    char buf[256];
    for (const Row& row : rows) {
        Scalar mrr = 0, h1 = 0, h3 = 0, h10 = 0;
        for (int i = 0; i < seeds; ++i) {
            KgcModel model =
                make_kgc_model(d.kg, d.v, d.s, row.kc, seed + i);
            train_kgc(model, d.kg);
            NoGradGuard ng;
            Tensor reprs = kgc_entity_reprs(model, 0, false);
            KgcEvalOptions opt;
            opt.l2_score = row.kc.l2_score;
            RankResult r = eval_kgc(reprs, model.phases, d.kg, opt);
            mrr += r.mrr;
            h1 += r.hits1;
            h3 += r.hits3;
            h10 += r.hits10;
        }
        mrr /= seeds;
        h1 /= seeds;
        h3 /= seeds;
        h10 /= seeds;
        csv += row.label + "," + fmt(mrr) + "," + fmt(h1) + "," + fmt(h3) +
               "," + fmt(h10) + "\n";
        std::snprintf(buf, sizeof(buf), "%-24s %7.4f %8.4f %8.4f %8.4f\n",
                      row.label.c_str(), mrr, h1, h3, h10);
        table += buf;
        std::cout << buf << std::flush;
    }
    write_text(a.out_dir + "/ablation.csv", csv);
    write_text(a.out_dir + "/ablation.txt", table);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        CliArgs a = parse_args(args);
        Config cfg = Config::parse_file(a.config_path);
        uint64_t seed = resolve_seed(cfg);
        cfg.set("run.seed", std::to_string(seed));
        fs::create_directories(a.out_dir);

        if (a.sub == "gen")
            cmd_gen(a, cfg, seed);
        else if (a.sub == "train-kgc")
            cmd_train_kgc(a, cfg, seed);
        else if (a.sub == "train-ea")
            cmd_train_ea(a, cfg, seed);
        else if (a.sub == "eval-kgc")
            cmd_eval_kgc(a, cfg, seed);
        else if (a.sub == "eval-ea")
            cmd_eval_ea(a, cfg, seed);
        else if (a.sub == "ablate")
            cmd_ablate(a, cfg, seed);
        else
            throw std::invalid_argument(
                "unknown subcommand `" + a.sub +
                "`; want gen, train-kgc, train-ea, eval-kgc, eval-ea or "
                "ablate");
        write_manifest(a.out_dir, a.sub, cfg);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace snag
