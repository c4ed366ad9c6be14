// xbe: command-line runner for the cross-stitch bi-encoder pipeline.
//
// Every command is driven by a flat key=value config (file + flag
// overrides, flags win) and writes the resolved config back into the
// workspace as <command>_manifest.cfg. Re-running a command from its
// manifest reproduces its output files byte for byte.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xbe/checkpoint.hpp"
#include "xbe/config.hpp"
#include "xbe/data.hpp"
#include "xbe/eval.hpp"
#include "xbe/model.hpp"
#include "xbe/train.hpp"

namespace fs = std::filesystem;
using namespace xbe;

namespace {

// ---- config schema ----

const std::set<std::string> kCommonKeys = {"command", "workspace", "seed", "data.dir"};

const std::set<std::string> kSynthKeys = {
    "data.relations",      "data.pairs_per_relation", "data.templates_per_relation",
    "data.template_tokens", "data.bag_size",           "data.noise",
    "data.train_fraction", "data.entity_markers",     "data.pool_overlap",
    "data.confusable_group_size", "data.private_templates", "data.entity_pool",
    "data.entity_blind", "data.na_pairs", "force"};

const std::set<std::string> kModelKeys = {
    "model.d",          "model.depth",      "model.heads",     "model.ffn_mult",
    "model.max_len",    "model.placement",  "model.stitch_hidden",
    "model.lambda_t",   "model.lambda_s",   "model.gate_mode", "model.fixed_gate",
    "model.w",          "model.transe_dim", "model.ablate"};

const std::set<std::string> kTrainKeys = {
    "train.lr",           "train.warmup",         "train.weight_decay",  "train.adam_eps",
    "train.kg_lr_scale",
    "train.batch",        "train.epochs",         "train.pretrain_epochs",
    "train.pretrain_lr",  "train.pretrain_batch", "train.kg_coverage", "train.transe_epochs",
    "train.transe_lr",    "train.transe_margin",  "out.checkpoint"};

std::set<std::string> merge_keys(std::initializer_list<const std::set<std::string>*> sets) {
    std::set<std::string> out;
    for (const auto* s : sets) out.insert(s->begin(), s->end());
    return out;
}

// registers string-valued flags that overwrite config keys when supplied
struct FlagBinder {
    std::vector<std::function<void(KvConfig&)>> appliers;

    void bind(CLI::App* cmd, const std::string& flag, const std::string& key,
              const std::string& help) {
        auto value = std::make_shared<std::string>();
        CLI::Option* opt = cmd->add_option(flag, *value, help);
        appliers.push_back([opt, value, key](KvConfig& cfg) {
            if (opt->count() > 0) cfg.set(key, *value);
        });
    }

    void bind_flag(CLI::App* cmd, const std::string& flag, const std::string& key,
                   const std::string& help) {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = cmd->add_flag(flag, *value, help);
        appliers.push_back([opt, value, key](KvConfig& cfg) {
            if (opt->count() > 0) cfg.set(key, *value ? "true" : "false");
        });
    }

    void apply(KvConfig& cfg) const {
        for (const auto& f : appliers) f(cfg);
    }
};

struct CommandCtx {
    KvConfig cfg;
    fs::path workspace;
    fs::path data_dir;
};

CommandCtx resolve_ctx(KvConfig cfg, const std::string& command) {
    cfg.set("command", command);
    std::string ws = cfg.get_str("workspace", "");
    if (ws.empty()) {
        if (const char* env = std::getenv("XBE_WORKSPACE")) ws = env;
        if (ws.empty()) ws = "xbe_workspace";
    }
    CommandCtx ctx;
    ctx.workspace = fs::absolute(ws).lexically_normal();
    cfg.set("workspace", ctx.workspace.string());
    std::string dd = cfg.get_str("data.dir", (ctx.workspace / "data").string());
    ctx.data_dir = fs::absolute(dd).lexically_normal();
    cfg.set("data.dir", ctx.data_dir.string());
    ctx.cfg = std::move(cfg);
    fs::create_directories(ctx.workspace);
    return ctx;
}

void write_manifest(const CommandCtx& ctx, const std::string& command) {
    ctx.cfg.save((ctx.workspace / (command + "_manifest.cfg")).string());
}

// outputs must stay inside the workspace
fs::path resolve_out(const CommandCtx& ctx, const std::string& p) {
    fs::path path = fs::path(p).is_absolute() ? fs::path(p) : ctx.workspace / p;
    path = path.lexically_normal();
    auto rel = path.lexically_relative(ctx.workspace);
    if (rel.empty() || rel.native().starts_with(".."))
        throw std::runtime_error("output path " + path.string() + " lies outside the workspace " +
                                 ctx.workspace.string());
    return path;
}

SynthSpec synth_spec(const KvConfig& cfg) {
    SynthSpec spec;
    spec.n_relations = cfg.get_int("data.relations", 4);
    spec.pairs_per_relation = cfg.get_int("data.pairs_per_relation", 50);
    spec.templates_per_relation = cfg.get_int("data.templates_per_relation", 6);
    spec.template_tokens = cfg.get_int("data.template_tokens", 6);
    spec.bag_size = cfg.get_int("data.bag_size", 5);
    spec.noise = cfg.get_int("data.noise", 0);
    spec.train_fraction = cfg.get_double("data.train_fraction", 0.75);
    spec.entity_markers = cfg.get_bool("data.entity_markers", true);
    spec.pool_overlap = cfg.get_double("data.pool_overlap", 0.0);
    spec.confusable_group_size = cfg.get_int("data.confusable_group_size", 1);
    spec.private_templates = cfg.get_int("data.private_templates", 0);
    spec.entity_pool = cfg.get_int("data.entity_pool", 0);
    spec.entity_blind = cfg.get_double("data.entity_blind", 0.0);
    spec.na_pairs = cfg.get_int("data.na_pairs", 0);
    spec.seed = cfg.get_u64("seed", 1);
    return spec;
}

struct LoadedData {
    DsreDataset train_raw, test_raw;
    CorpusIndex index;
    IndexedDataset train, test;
};

LoadedData load_data(const CommandCtx& ctx) {
    const fs::path train_path = ctx.data_dir / "train.tsv";
    const fs::path test_path = ctx.data_dir / "test.tsv";
    const fs::path kg_path = ctx.data_dir / "kg.tsv";
    for (const fs::path& p : {train_path, test_path, kg_path})
        if (!fs::exists(p))
            throw std::runtime_error("dataset file " + p.string() + " is missing (run `xbe synth` first)");
    LoadedData d;
    d.train_raw = load_dataset(train_path.string(), kg_path.string());
    d.train_raw.split = "train";
    d.test_raw = load_dataset(test_path.string(), kg_path.string());
    d.test_raw.split = "test";
    const DsreDataset* splits[] = {&d.train_raw, &d.test_raw};
    d.index = CorpusIndex::build(splits);
    d.train = index_dataset(d.train_raw, d.index);
    d.test = index_dataset(d.test_raw, d.index);
    return d;
}

AblationSwitches parse_ablate(const std::string& text) {
    AblationSwitches a;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t comma = text.find(',', at);
        if (comma == std::string::npos) comma = text.size();
        const std::string piece = text.substr(at, comma - at);
        if (piece == "no_xstitch") a.no_xstitch = true;
        else if (piece == "no_kg_encoder") a.no_kg_encoder = true;
        else if (piece == "no_text_encoder") a.no_text_encoder = true;
        else if (piece == "no_rht") a.no_rht = true;
        else if (piece == "freeze_kg") a.freeze_kg = true;
        else if (piece == "random_init_kg") a.random_init_kg = true;
        else if (!piece.empty() && piece != "none")
            throw std::runtime_error("unknown ablation switch '" + piece + "'");
        at = comma + 1;
    }
    return a;
}

XbeConfig model_config(const KvConfig& cfg, const CorpusIndex& index) {
    const int d = cfg.get_int("model.d", 64);
    const int depth = cfg.get_int("model.depth", 6);
    const int heads = cfg.get_int("model.heads", 4);
    const int ffn = cfg.get_int("model.ffn_mult", 4);
    const int max_len = cfg.get_int("model.max_len", 64);

    XbeConfig c;
    c.text = {depth, d, heads, ffn, max_len, index.text_vocab.size()};
    c.kg = {depth, d, heads, ffn, 3, index.kg_layout().size()};
    c.stitch_layers = parse_placement(cfg.get_str("model.placement", depth > 4 ? "4" : "1"), depth);
    c.stitch_hidden = cfg.get_int("model.stitch_hidden", 0);
    c.lambda_t = cfg.get_double("model.lambda_t", 1.0);
    c.lambda_s = cfg.get_double("model.lambda_s", 1e-4);
    const std::string gate = cfg.get_str("model.gate_mode", "dynamic");
    if (gate == "dynamic") c.gate_mode = GateMode::dynamic;
    else if (gate == "fixed") c.gate_mode = GateMode::fixed;
    else throw std::runtime_error("model.gate_mode must be dynamic or fixed, got '" + gate + "'");
    c.fixed_gate = cfg.get_double("model.fixed_gate", 0.5);
    c.loss_weight = cfg.get_double("model.w", 1.0);
    c.n_target_relations = index.n_target_relations();
    c.transe_dim = cfg.get_int("model.transe_dim", 32);
    c.ablate = parse_ablate(cfg.get_str("model.ablate", ""));
    return c;
}

TrainConfig train_config(const KvConfig& cfg) {
    TrainConfig t;
    t.lr = cfg.get_double("train.lr", 3e-4);
    t.warmup_steps = cfg.get_int("train.warmup", 500);
    t.weight_decay = cfg.get_double("train.weight_decay", 1e-5);
    t.adam_eps = cfg.get_double("train.adam_eps", 1e-8);
    t.batch_size = cfg.get_int("train.batch", 8);
    t.epochs = cfg.get_int("train.epochs", 15);
    t.seed = cfg.get_u64("seed", 1);
    t.kg_lr_scale = cfg.get_double("train.kg_lr_scale", 1.0);
    t.pretrain_epochs = cfg.get_int("train.pretrain_epochs", 5);
    t.pretrain_lr = cfg.get_double("train.pretrain_lr", 1e-3);
    t.pretrain_batch = cfg.get_int("train.pretrain_batch", 16);
    t.kg_coverage = cfg.get_double("train.kg_coverage", 1.0);
    t.transe_epochs = cfg.get_int("train.transe_epochs", 50);
    t.transe_lr = cfg.get_double("train.transe_lr", 0.05);
    t.transe_margin = cfg.get_double("train.transe_margin", 1.0);
    return t;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t comma = text.find(',', at);
        if (comma == std::string::npos) comma = text.size();
        const std::string piece = text.substr(at, comma - at);
        try {
            out.push_back(std::stoi(piece));
        } catch (const std::exception&) {
            throw std::runtime_error(what + ": bad integer '" + piece + "'");
        }
        at = comma + 1;
    }
    return out;
}

void write_train_log(const fs::path& path, const TrainLog& log) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    os << "phase,epoch,loss\n";
    char buf[64];
    auto emit = [&](const char* phase, const std::vector<double>& losses) {
        for (std::size_t i = 0; i < losses.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", losses[i]);
            os << phase << ',' << (i + 1) << ',' << buf << '\n';
        }
    };
    emit("transe", log.transe_epoch_loss);
    emit("pretrain", log.pretrain_epoch_loss);
    emit("train", log.epoch_mean_loss);
}

// ---- commands ----

int cmd_synth(const CommandCtx& ctx) {
    const SynthSpec spec = synth_spec(ctx.cfg);
    const bool force = ctx.cfg.get_bool("force", false);
    fs::create_directories(ctx.data_dir);

    const fs::path outputs[] = {ctx.data_dir / "train.tsv", ctx.data_dir / "test.tsv",
                                ctx.data_dir / "kg.tsv", ctx.data_dir / "split.tsv"};
    for (const fs::path& p : outputs)
        if (fs::exists(p) && !force)
            throw std::runtime_error(p.string() + " already exists (use --force to overwrite)");

    write_manifest(ctx, "synth");
    SynthOutput out = synthesize_dataset(spec);
    save_corpus(outputs[0].string(), out.train);
    save_corpus(outputs[1].string(), out.test);
    save_kg(outputs[2].string(), out.train.triples);
    {
        std::ofstream os(outputs[3], std::ios::trunc | std::ios::binary);
        os << "e1\te2\tsplit\n";
        for (const Bag& b : out.train.bags) os << b.e1 << '\t' << b.e2 << "\ttrain\n";
        for (const Bag& b : out.test.bags) os << b.e1 << '\t' << b.e2 << "\ttest\n";
    }
    std::cout << "synth: wrote " << out.train.bags.size() << " train bags, " << out.test.bags.size()
              << " test bags, " << out.train.triples.size() << " KG triples to " << ctx.data_dir
              << "\n";
    return 0;
}

int cmd_pretrain_kg(const CommandCtx& ctx) {
    write_manifest(ctx, "pretrain-kg");
    LoadedData data = load_data(ctx);
    XbeConfig mc = model_config(ctx.cfg, data.index);
    TrainConfig tc = train_config(ctx.cfg);
    XbeModel model(mc, data.index.kg_layout(), tc.seed);

    const std::vector<Triple> kg = covered_kg(data.train, tc);
    auto losses = pretrain_kg(model, kg, tc);
    const fs::path ckpt = resolve_out(ctx, ctx.cfg.get_str("out.checkpoint", "xbe_pretrained.ckpt"));
    save_checkpoint(ckpt.string(), model);

    TrainLog log;
    log.pretrain_epoch_loss = losses;
    write_train_log(ctx.workspace / "pretrain_log.csv", log);
    std::cout << "pretrain-kg: " << losses.size() << " epochs, final loss "
              << (losses.empty() ? 0.0 : losses.back()) << ", checkpoint " << ckpt << "\n";
    return 0;
}

int cmd_train(const CommandCtx& ctx) {
    write_manifest(ctx, "train");
    LoadedData data = load_data(ctx);
    XbeConfig mc = model_config(ctx.cfg, data.index);
    TrainConfig tc = train_config(ctx.cfg);
    XbeModel model(mc, data.index.kg_layout(), tc.seed);

    TrainLog log = train_xbe(model, data.train, tc);
    const fs::path ckpt = resolve_out(ctx, ctx.cfg.get_str("out.checkpoint", "xbe_model.ckpt"));
    save_checkpoint(ckpt.string(), model);
    write_train_log(ctx.workspace / "train_log.csv", log);
    std::cout << "train: " << log.epoch_mean_loss.size() << " epochs, final mean loss "
              << (log.epoch_mean_loss.empty() ? 0.0 : log.epoch_mean_loss.back()) << ", checkpoint "
              << ckpt << "\n";
    return 0;
}

XbeModel load_model_for(const CommandCtx& ctx, const LoadedData& data, const char* cmd) {
    const std::string ckpt = ctx.cfg.get_str("checkpoint", (ctx.workspace / "xbe_model.ckpt").string());
    if (!fs::exists(ckpt))
        throw std::runtime_error(std::string(cmd) + ": checkpoint " + ckpt +
                                 " does not exist (run `xbe train` or pass --checkpoint)");
    XbeModel model = load_checkpoint(ckpt);
    if (model.config().text.vocab_size != data.index.text_vocab.size() ||
        model.config().kg.vocab_size != data.index.kg_layout().size())
        throw std::runtime_error(std::string(cmd) + ": checkpoint vocabulary (" +
                                 std::to_string(model.config().text.vocab_size) + " text / " +
                                 std::to_string(model.config().kg.vocab_size) +
                                 " kg) is inconsistent with the dataset (" +
                                 std::to_string(data.index.text_vocab.size()) + " / " +
                                 std::to_string(data.index.kg_layout().size()) + ")");
    return model;
}

int cmd_eval(const CommandCtx& ctx) {
    write_manifest(ctx, "eval");
    LoadedData data = load_data(ctx);
    XbeModel model = load_model_for(ctx, data, "eval");

    auto pn = parse_int_list(ctx.cfg.get_str("eval.p_at", "10,30,50,100,200"), "eval.p_at");
    const std::string split = ctx.cfg.get_str("eval.split", "test");
    const IndexedDataset& ds = split == "train" ? data.train : data.test;
    EvalReport report = evaluate(model, ds, data.index, pn);

    write_eval_report_csv((ctx.workspace / "eval_report.csv").string(), report);
    write_pr_curve_csv((ctx.workspace / "pr_curve.csv").string(), report);
    write_metrics_csv((ctx.workspace / "metrics.csv").string(), report);
    std::cout << "eval: AUC " << report.auc << " over " << report.ranking.size() << " candidates ("
              << report.total_gold << " gold)\n";
    for (const auto& [n, p] : report.p_at_n) std::cout << "  P@" << n << " = " << p << "\n";
    return 0;
}

int cmd_probe_gates(const CommandCtx& ctx) {
    write_manifest(ctx, "probe-gates");
    LoadedData data = load_data(ctx);
    XbeModel model = load_model_for(ctx, data, "probe-gates");

    const std::string split = ctx.cfg.get_str("probe.split", "train");
    const IndexedDataset& ds = split == "train" ? data.train : data.test;
    const double noise_label = ctx.cfg.get_double("probe.noise_label", -1.0);

    GateProbe probe = gate_probe(model, ds);
    std::vector<std::pair<double, GateProbe>> rows = {{noise_label, probe}};
    write_gate_probe_csv((ctx.workspace / "gate_probe.csv").string(), rows);

    // per-example trace
    std::ofstream trace((ctx.workspace / "gate_trace.csv").string(), std::ios::trunc | std::ios::binary);
    write_gate_trace_header(trace);
    {
        NoGradGuard ng;
        for (const IndexedBag& bag : ds.bags)
            for (std::size_t i = 0; i < bag.sentences.size(); ++i) {
                auto fr = model.forward_pair(bag.sentences[i], bag.masked, true);
                append_gate_trace_csv(trace, bag.e1 + "|" + bag.e2 + "|s" + std::to_string(i), fr.trace);
            }
    }
    std::cout << "probe-gates: gate sum " << probe.t2s_sum << " over " << probe.t2s_count
              << " entries (mean " << probe.t2s_mean << ")\n";
    return 0;
}

int cmd_ablate(const CommandCtx& ctx) {
    write_manifest(ctx, "ablate");
    LoadedData data = load_data(ctx);
    XbeConfig mc = model_config(ctx.cfg, data.index);
    TrainConfig tc = train_config(ctx.cfg);

    const int n_seeds = ctx.cfg.get_int("ablate.seeds", 3);
    if (n_seeds < 1) throw std::runtime_error("ablate.seeds must be >= 1");
    std::vector<std::uint64_t> seeds;
    const std::uint64_t base = ctx.cfg.get_u64("seed", 1);
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));

    AblationTable table = run_ablation_suite(mc, tc, data.train, data.test, data.index, seeds);
    write_ablation_csv((ctx.workspace / "ablation_table.csv").string(), table);
    for (const AblationRow& row : table.rows)
        std::cout << "ablate: " << row.variant << " mean AUC " << row.mean_auc << " (stddev "
                  << row.stddev_auc << ")\n";
    return 0;
}

int cmd_sweep_layers(const CommandCtx& ctx) {
    write_manifest(ctx, "sweep-layers");
    LoadedData data = load_data(ctx);
    XbeConfig mc = model_config(ctx.cfg, data.index);
    TrainConfig tc = train_config(ctx.cfg);

    std::string text = ctx.cfg.get_str("sweep.placements", "");
    std::vector<std::string> placements;
    if (text.empty()) {
        for (int i = 1; i < std::min(mc.text.depth, mc.kg.depth); ++i)
            placements.push_back(std::to_string(i));
        placements.emplace_back("all");
    } else {
        std::size_t at = 0;
        while (at < text.size()) {
            std::size_t semi = text.find(';', at);
            if (semi == std::string::npos) semi = text.size();
            placements.push_back(text.substr(at, semi - at));
            at = semi + 1;
        }
    }

    auto rows = layer_sweep(mc, tc, data.train, data.test, data.index, placements);
    write_layer_sweep_csv((ctx.workspace / "layer_sweep.csv").string(), rows);
    for (const SweepRow& r : rows) std::cout << "sweep-layers: " << r.placement << " AUC " << r.auc << "\n";
    return 0;
}

int cmd_gradcheck(const CommandCtx& ctx) {
    write_manifest(ctx, "gradcheck");

    SynthSpec spec;
    spec.n_relations = 4;
    spec.pairs_per_relation = 3;
    spec.templates_per_relation = 2;
    spec.bag_size = 2;
    spec.seed = ctx.cfg.get_u64("seed", 1);
    SynthOutput data = synthesize_dataset(spec);
    const DsreDataset* splits[] = {&data.train, &data.test};
    CorpusIndex index = CorpusIndex::build(splits);
    IndexedDataset train = index_dataset(data.train, index);

    XbeConfig mc;
    mc.text = {2, 16, 4, 2, 32, index.text_vocab.size()};
    mc.kg = {2, 16, 4, 2, 3, index.kg_layout().size()};
    mc.stitch_layers = {1};
    mc.lambda_s = 0.5;
    mc.n_target_relations = index.n_target_relations();
    mc.transe_dim = 8;
    XbeModel model(mc, index.kg_layout(), spec.seed);
    Rng trng(mix_seed(spec.seed, "gradcheck-transe"));
    model.set_transe(TransETable(index.kg_layout().n_entities, index.kg_layout().n_relations,
                                 mc.transe_dim, trng));
    // nudge every parameter off its initialization so the check runs at a
    // generic point (zero-initialized groups would otherwise test 0 == 0)
    Rng nudge(mix_seed(spec.seed, "gradcheck-nudge"));
    for (auto& [name, p] : model.named_params()) {
        auto data = p.mutable_data();
        for (auto& v : data) v += nudge.normal() * 0.02;
    }

    GradCheckReport report = grad_check(model, train.bags.front(), 3);
    for (const GradCheckGroup& g : report.groups)
        std::cout << "gradcheck: " << g.name << " max rel err " << g.max_rel_err << "\n";
    std::cout << "gradcheck: worst " << report.worst << " over " << report.groups.size()
              << " parameter groups\n";
    if (!report.passed(1e-3)) {
        std::cerr << "gradcheck: FAILED (worst " << report.worst << " > 1e-3)\n";
        return 1;
    }
    std::cout << "gradcheck: PASS\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-stitch bi-encoder for distantly supervised relation extraction"};
    app.require_subcommand(1);

    struct Pending {
        std::string name;
        CLI::App* cmd;
        FlagBinder binder;
        std::shared_ptr<std::string> config_path;
        std::set<std::string> allowed;
        std::function<int(const CommandCtx&)> run;
    };
    std::vector<std::unique_ptr<Pending>> commands;

    auto add_command = [&](const std::string& name, const std::string& help,
                           std::set<std::string> allowed,
                           std::function<int(const CommandCtx&)> run) -> Pending& {
        auto p = std::make_unique<Pending>();
        p->name = name;
        p->cmd = app.add_subcommand(name, help);
        p->config_path = std::make_shared<std::string>();
        p->cmd->add_option("--config", *p->config_path, "key=value config file (flags override it)");
        p->binder.bind(p->cmd, "--workspace", "workspace", "workspace directory (default $XBE_WORKSPACE)");
        p->binder.bind(p->cmd, "--seed", "seed", "master seed");
        p->binder.bind(p->cmd, "--data-dir", "data.dir", "dataset directory (default <workspace>/data)");
        p->allowed = std::move(allowed);
        p->allowed.insert(kCommonKeys.begin(), kCommonKeys.end());
        p->run = std::move(run);
        commands.push_back(std::move(p));
        return *commands.back();
    };

    auto bind_model_flags = [](Pending& p) {
        p.binder.bind(p.cmd, "--d", "model.d", "hidden size");
        p.binder.bind(p.cmd, "--depth", "model.depth", "encoder depth");
        p.binder.bind(p.cmd, "--heads", "model.heads", "attention heads");
        p.binder.bind(p.cmd, "--ffn-mult", "model.ffn_mult", "FFN expansion");
        p.binder.bind(p.cmd, "--max-len", "model.max_len", "max sequence length");
        p.binder.bind(p.cmd, "--placement", "model.placement", "stitch sites, e.g. 4 or 2,4 or all");
        p.binder.bind(p.cmd, "--stitch-hidden", "model.stitch_hidden", "stitch MLP hidden size (0 = d)");
        p.binder.bind(p.cmd, "--lambda-t", "model.lambda_t", "t2s mixing weight");
        p.binder.bind(p.cmd, "--lambda-s", "model.lambda_s", "s2t mixing weight");
        p.binder.bind(p.cmd, "--gate-mode", "model.gate_mode", "dynamic | fixed");
        p.binder.bind(p.cmd, "--fixed-gate", "model.fixed_gate", "fixed gate value");
        p.binder.bind(p.cmd, "--w", "model.w", "KG loss weight w");
        p.binder.bind(p.cmd, "--transe-dim", "model.transe_dim", "TransE embedding width");
        p.binder.bind(p.cmd, "--ablate", "model.ablate", "comma list of ablation switches");
    };
    auto bind_train_flags = [](Pending& p) {
        p.binder.bind(p.cmd, "--lr", "train.lr", "learning rate");
        p.binder.bind(p.cmd, "--warmup", "train.warmup", "warmup steps");
        p.binder.bind(p.cmd, "--weight-decay", "train.weight_decay", "decoupled weight decay");
        p.binder.bind(p.cmd, "--adam-eps", "train.adam_eps", "Adam epsilon");
        p.binder.bind(p.cmd, "--batch", "train.batch", "bags per optimizer step");
        p.binder.bind(p.cmd, "--kg-lr-scale", "train.kg_lr_scale", "fine-tune LR multiplier for KG params");
        p.binder.bind(p.cmd, "--epochs", "train.epochs", "fine-tuning epochs");
        p.binder.bind(p.cmd, "--pretrain-epochs", "train.pretrain_epochs", "KG pre-training epochs");
        p.binder.bind(p.cmd, "--pretrain-lr", "train.pretrain_lr", "KG pre-training learning rate");
        p.binder.bind(p.cmd, "--pretrain-batch", "train.pretrain_batch", "KG pre-training batch");
        p.binder.bind(p.cmd, "--kg-coverage", "train.kg_coverage",
                      "fraction of the triple inventory the model's KG resource holds");
        p.binder.bind(p.cmd, "--transe-epochs", "train.transe_epochs", "TransE epochs");
        p.binder.bind(p.cmd, "--transe-lr", "train.transe_lr", "TransE learning rate");
        p.binder.bind(p.cmd, "--transe-margin", "train.transe_margin", "TransE margin");
        p.binder.bind(p.cmd, "--checkpoint-out", "out.checkpoint", "checkpoint output path");
    };

    {
        Pending& p = add_command("synth", "generate a synthetic DS-RE dataset", kSynthKeys, cmd_synth);
        p.binder.bind(p.cmd, "--relations", "data.relations", "relation count");
        p.binder.bind(p.cmd, "--pairs", "data.pairs_per_relation", "entity pairs per relation");
        p.binder.bind(p.cmd, "--templates", "data.templates_per_relation", "templates per relation");
        p.binder.bind(p.cmd, "--template-tokens", "data.template_tokens", "filler tokens per template");
        p.binder.bind(p.cmd, "--bag", "data.bag_size", "sentences per bag (n)");
        p.binder.bind(p.cmd, "--noise", "data.noise", "noisy sentences per bag (m)");
        p.binder.bind(p.cmd, "--train-fraction", "data.train_fraction", "pair-level train fraction");
        p.binder.bind(p.cmd, "--pool-overlap", "data.pool_overlap", "keyword pool overlap between adjacent relations");
        p.binder.bind(p.cmd, "--confusable-group", "data.confusable_group_size",
                      "relations per shared-template group (1 = off)");
        p.binder.bind(p.cmd, "--private-templates", "data.private_templates",
                      "templates kept private to each relation inside a group");
        p.binder.bind(p.cmd, "--entity-pool", "data.entity_pool",
                      "shared entity pool size (0 = fresh entities per pair)");
        p.binder.bind(p.cmd, "--entity-blind", "data.entity_blind",
                      "fraction of sentences with blinded mention surfaces");
        p.binder.bind(p.cmd, "--na-pairs", "data.na_pairs", "extra NA-labeled bags");
        p.binder.bind(p.cmd, "--entity-markers", "data.entity_markers", "true|false marker tokens");
        p.binder.bind_flag(p.cmd, "--force", "force", "overwrite existing dataset files");
    }
    {
        Pending& p = add_command("pretrain-kg", "pre-train the KG encoder on the KG triples",
                                 merge_keys({&kModelKeys, &kTrainKeys}), cmd_pretrain_kg);
        bind_model_flags(p);
        bind_train_flags(p);
    }
    {
        Pending& p = add_command("train", "train the full model (TransE + KG pre-training + fine-tune)",
                                 merge_keys({&kModelKeys, &kTrainKeys}), cmd_train);
        bind_model_flags(p);
        bind_train_flags(p);
    }
    {
        std::set<std::string> keys = {"checkpoint", "eval.p_at", "eval.split"};
        Pending& p = add_command("eval", "held-out evaluation (PR curve, AUC, P@N)", keys, cmd_eval);
        p.binder.bind(p.cmd, "--checkpoint", "checkpoint", "model checkpoint to evaluate");
        p.binder.bind(p.cmd, "--p-at", "eval.p_at", "comma list of P@N cutoffs");
        p.binder.bind(p.cmd, "--split", "eval.split", "train | test");
    }
    {
        std::set<std::string> keys = {"checkpoint", "probe.split", "probe.noise_label"};
        Pending& p = add_command("probe-gates", "record cross-stitch gate activations", keys,
                                 cmd_probe_gates);
        p.binder.bind(p.cmd, "--checkpoint", "checkpoint", "model checkpoint to probe");
        p.binder.bind(p.cmd, "--split", "probe.split", "train | test");
        p.binder.bind(p.cmd, "--noise-label", "probe.noise_label", "noise ratio label for the CSV row");
    }
    {
        std::set<std::string> keys = merge_keys({&kModelKeys, &kTrainKeys});
        keys.insert("ablate.seeds");
        Pending& p = add_command("ablate", "train and evaluate every ablation variant", keys, cmd_ablate);
        bind_model_flags(p);
        bind_train_flags(p);
        p.binder.bind(p.cmd, "--seeds", "ablate.seeds", "number of seeds (seed, seed+1, ...)");
    }
    {
        std::set<std::string> keys = merge_keys({&kModelKeys, &kTrainKeys});
        keys.insert("sweep.placements");
        Pending& p = add_command("sweep-layers", "train and evaluate per stitch placement", keys,
                                 cmd_sweep_layers);
        bind_model_flags(p);
        bind_train_flags(p);
        p.binder.bind(p.cmd, "--placements", "sweep.placements",
                      "semicolon list of placements, e.g. 1;2;all");
    }
    {
        Pending& p = add_command("gradcheck", "finite-difference check of every parameter group", {},
                                 cmd_gradcheck);
        (void)p;
    }

    CLI11_PARSE(app, argc, argv);

    for (auto& p : commands) {
        if (!p->cmd->parsed()) continue;
        try {
            KvConfig cfg;
            if (!p->config_path->empty()) cfg = KvConfig::load(*p->config_path);
            p->binder.apply(cfg);
            CommandCtx ctx = resolve_ctx(std::move(cfg), p->name);
            const std::string declared = ctx.cfg.get_str("command", p->name);
            if (declared != p->name)
                throw std::runtime_error("config file was written for command '" + declared + "'");
            ctx.cfg.require_known(p->allowed);
            return p->run(ctx);
        } catch (const std::exception& e) {
            std::cerr << "xbe " << p->name << ": " << e.what() << "\n";
            return 1;
        }
    }
    return 1;
}
