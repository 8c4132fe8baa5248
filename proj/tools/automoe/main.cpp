// automoe: supernet training, evolutionary search, cost reports, subnet
// training, evaluation and architecture analysis from one binary.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>

#include "automoe/analyze.hpp"
#include "automoe/cost_model.hpp"
#include "automoe/errors.hpp"
#include "automoe/evo_search.hpp"
#include "automoe/latency.hpp"
#include "automoe/supernet.hpp"
#include "automoe/trainer.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace automoe;
using namespace automoe::cli;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::optional<std::string> out;
  std::uint64_t seed = 1;
};

struct ScheduleOpts {
  long steps = 2000;
  long warmup = -1;  // -1: steps / 4
  double lr_peak = 1e-3;
  double lr_min = 1e-7;
  int batch_tokens = 4096;
  double label_smoothing = 0.1;
  double aux_coeff = 0.01;
  double dropout = 0.0;
  long checkpoint_every = 0;
  int log_every = 10;

  TrainSchedule schedule(std::uint64_t seed) const {
    TrainSchedule s;
    s.total_steps = steps;
    s.warmup_steps = warmup < 0 ? steps / 4 : warmup;
    s.lr_peak = lr_peak;
    s.lr_min = lr_min;
    s.batch_tokens = batch_tokens;
    s.label_smoothing = label_smoothing;
    s.aux_loss_coeff = aux_coeff;
    s.dropout = dropout;
    s.checkpoint_every = checkpoint_every;
    s.seed = seed;
    return s;
  }
};

struct LengthOpts {
  int src_len = 30;
  int tgt_len = 30;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Output directory (default $AUTOMOE_OUTPUT_ROOT/<command>)");
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--config", "JSON file of flag values; flags given here override it");
}

void add_dataset(CLI::App* sub, DatasetSpec& d) {
  sub->add_option("--task", d.task, "Synthetic task: copy | reverse | lookup-translate");
  sub->add_option("--vocab", d.vocab, "Synthetic vocabulary size (including 4 specials)")->capture_default_str();
  sub->add_option("--len", d.len, "Synthetic sequence length")->capture_default_str();
  sub->add_option("--count", d.count, "Synthetic pair count")->capture_default_str();
  sub->add_option("--src", d.src_path, "Source side of a plain-text parallel corpus");
  sub->add_option("--tgt", d.tgt_path, "Target side of a plain-text parallel corpus");
  sub->add_option("--vocab-file", d.vocab_file, "Reuse this vocabulary (one token per line)");
  sub->add_option("--max-len", d.max_len, "Corpus truncation length")->capture_default_str();
  sub->add_option("--min-freq", d.min_freq, "Corpus vocabulary min frequency")->capture_default_str();
  sub->add_option("--holdout", d.holdout, "Validation pairs split off the dataset")->capture_default_str();
  sub->add_option("--data-seed", d.seed, "Seed for synthetic data and the split")->capture_default_str();
}

void add_schedule(CLI::App* sub, ScheduleOpts& s) {
  sub->add_option("--steps", s.steps, "Training steps")->capture_default_str();
  sub->add_option("--warmup", s.warmup, "Warmup steps (default steps/4)");
  sub->add_option("--lr-peak", s.lr_peak)->capture_default_str();
  sub->add_option("--lr-min", s.lr_min)->capture_default_str();
  sub->add_option("--batch-tokens", s.batch_tokens)->capture_default_str();
  sub->add_option("--label-smoothing", s.label_smoothing)->capture_default_str();
  sub->add_option("--aux-coeff", s.aux_coeff, "Load-balancing loss coefficient")->capture_default_str();
  sub->add_option("--dropout", s.dropout)->capture_default_str();
  sub->add_option("--checkpoint-every", s.checkpoint_every, "0 keeps only the final checkpoint")->capture_default_str();
  sub->add_option("--log-every", s.log_every, "metrics.jsonl stride")->capture_default_str();
}

void add_lengths(CLI::App* sub, LengthOpts& l) {
  sub->add_option("--src-len", l.src_len, "Source length for FLOPs/latency")->capture_default_str();
  sub->add_option("--tgt-len", l.tgt_len, "Target length for FLOPs/latency")->capture_default_str();
}

ordered_json effective_config(const CLI::App* sub) {
  ordered_json j;
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = o->get_name(false, true);
    if (name.empty() || name == "--help" || name == "--config") continue;
    const std::string key = name.substr(name.find_first_not_of('-'));
    if (o->count() > 0) {
      const auto& r = o->results();
      j[key] = r.size() == 1 ? ordered_json(r[0]) : ordered_json(r);
    } else if (!o->get_default_str().empty()) {
      j[key] = o->get_default_str();
    } else if (o->get_type_size() == 0) {
      j[key] = false;  // unset flag
    }
  }
  return j;
}

ModelDims dims_for(const ParallelCorpus& c, int max_positions) {
  if (max_positions < c.max_len + 2) {
    throw ConfigError("--max-positions must be >= max sequence length + 2 (" + std::to_string(c.max_len + 2) + ")");
  }
  return {c.vocab_size(), max_positions};
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

ParallelCorpus head(const ParallelCorpus& c, std::size_t n) {
  if (n == 0 || n >= c.size()) return c;
  ParallelCorpus h = c;
  h.src.resize(n);
  h.tgt.resize(n);
  return h;
}

// ---- commands -------------------------------------------------------------

struct TrainSupernetCmd {
  Common common;
  DatasetSpec data;
  ScheduleOpts sched;
  std::string space_path;
  int max_positions = 64;
};

void run_train_supernet(const TrainSupernetCmd& c, const CLI::App* sub) {
  const std::string out = resolve_output_dir(c.common.out, "train-supernet");
  const SearchSpace space = read_space_file(c.space_path);
  require_valid_space(space);
  const Dataset ds = load_dataset(c.data);
  Supernet net(space, dims_for(ds.train, c.max_positions), c.common.seed);
  TrainOutputs outputs{path_in(out, "metrics.jsonl"), path_in(out, "checkpoints"), c.sched.log_every};
  const TrainResult r = train_supernet(net, ds.train, c.sched.schedule(c.common.seed), outputs);
  save_supernet(path_in(out, "supernet.ckpt"), net);
  std::ofstream(path_in(out, "vocab.txt")) << ds.train.vocab.serialize();
  write_space_file(path_in(out, "space.json"), space);
  std::cout << "trained supernet for " << r.log.size() << " steps; final loss " << r.log.back().loss << "\n"
            << "wrote " << path_in(out, "supernet.ckpt") << "\n";
  write_manifest(out, {"train-supernet", effective_config(sub), c.common.seed,
                       {"supernet.ckpt", "metrics.jsonl", "checkpoints/", "vocab.txt", "space.json"}});
}

struct SearchCmd {
  Common common;
  DatasetSpec data;
  LengthOpts lengths;
  std::string space_path;
  std::string supernet_path;
  EvoConfig evo;
  std::optional<double> flops_limit;
  std::optional<double> flops_fraction;
  std::optional<double> latency_limit_ms;
  bool unconstrained = false;
  std::size_t valid_pairs = 256;
};

void run_search(const SearchCmd& c, const CLI::App* sub) {
  const std::string out = resolve_output_dir(c.common.out, "search");
  const SearchSpace space = read_space_file(c.space_path);
  const Supernet net = load_supernet(c.supernet_path, space);
  const Dataset ds = load_dataset(c.data);
  if (ds.valid.vocab_size() != net.dims().vocab) {
    throw ConfigError("dataset vocabulary (" + std::to_string(ds.valid.vocab_size()) + ") does not match the supernet (" +
                      std::to_string(net.dims().vocab) + ")");
  }
  const auto valid = corpus_batches(head(ds.valid, c.valid_pairs), 64);

  EvoConfig cfg = c.evo;
  cfg.seed = c.common.seed;
  cfg.cost.src_len = c.lengths.src_len;
  cfg.cost.tgt_len = c.lengths.tgt_len;
  cfg.unconstrained = c.unconstrained;
  cfg.latency_limit_ms = c.latency_limit_ms;
  if (c.flops_limit && c.flops_fraction) throw ConfigError("give --flops-limit or --flops-fraction, not both");
  if (c.flops_limit) cfg.flops_limit = *c.flops_limit;
  if (c.flops_fraction) cfg.flops_limit = *c.flops_fraction * count_flops(net.max(), cfg.cost).total();

  // Keeps the full result of every measurement so the front's gold runs can be logged.
  std::map<std::pair<std::uint64_t, int>, LatencyResult> measured;
  LatencyFn latency;
  if (cfg.latency_limit_ms) {
    latency = [&](const Gene& g, int passes) {
      LatencySpec spec;
      spec.passes = passes;
      spec.src_len = c.lengths.src_len;
      spec.tgt_len = c.lengths.tgt_len;
      const SubnetView view = extract_subnet(net, g);
      LatencyResult r = measure(g, net.params(), view.slices, net.dims(), spec, c.common.seed);
      const double ms = r.total_ms;
      measured[{gene_hash(g), passes}] = std::move(r);
      return ms;
    };
  }
  const EvoResult result = evolve(
      space, cfg, [&](const Gene& g) { return estimate_fitness(net, g, valid); }, latency);

  write_history_jsonl(path_in(out, "history.jsonl"), result);
  write_gene_file(path_in(out, "best.gene.json"), result.best.gene);
  const std::string pareto_dir = path_in(out, "pareto");
  fs::create_directories(pareto_dir);
  ordered_json front = ordered_json::array();
  for (std::size_t i = 0; i < result.pareto.size(); ++i) {
    const Candidate& cand = result.pareto[i];
    char stem[16];
    std::snprintf(stem, sizeof stem, "%03zu", i);
    write_gene_file(path_in(pareto_dir, std::string(stem) + ".gene.json"), cand.gene);
    std::ofstream(path_in(pareto_dir, std::string(stem) + ".cost.json")) << encode_cost_report(cost_report(cand.gene, cfg.cost));
    auto it = measured.find({gene_hash(cand.gene), kGoldPasses});
    if (it != measured.end()) {
      LatencySpec spec;
      spec.src_len = c.lengths.src_len;
      spec.tgt_len = c.lengths.tgt_len;
      spec.constraint_ms = cfg.latency_limit_ms;
      append_latency_log(path_in(pareto_dir, "latency.jsonl"), cand.gene, spec, it->second);
    }
    ordered_json e{{"name", stem}, {"fitness", cand.fitness}, {"flops", cand.flops}};
    if (cand.latency_ms) e["latency_ms"] = *cand.latency_ms;
    front.push_back(e);
  }
  ordered_json summary{{"best_fitness", result.best.fitness},
                       {"best_flops", result.best.flops},
                       {"flops_limit", cfg.flops_limit ? ordered_json(*cfg.flops_limit) : ordered_json()},
                       {"latency_limit_ms", cfg.latency_limit_ms ? ordered_json(*cfg.latency_limit_ms) : ordered_json()},
                       {"seeding_attempts", result.seeding_attempts},
                       {"pareto", front}};
  write_json(path_in(out, "search.json"), summary);
  std::cout << "best fitness " << result.best.fitness << " at " << result.best.flops / 1e9 << " GFLOPs; "
            << result.pareto.size() << " genes on the front\n";
  write_manifest(out, {"search", effective_config(sub), c.common.seed,
                       {"history.jsonl", "best.gene.json", "pareto/", "search.json"}, cfg.latency_limit_ms.has_value()});
}

struct CostReportCmd {
  Common common;
  LengthOpts lengths;
  std::vector<std::string> genes;
  bool include_output = false;
  int vocab_size = 0;
};

void run_cost_report(const CostReportCmd& c, const CLI::App* sub) {
  const std::string out = resolve_output_dir(c.common.out, "cost-report");
  CostOptions opt;
  opt.src_len = c.lengths.src_len;
  opt.tgt_len = c.lengths.tgt_len;
  opt.include_output_projection = c.include_output;
  opt.vocab = c.vocab_size;
  if (opt.include_output_projection && opt.vocab <= 0) throw ConfigError("--include-output-projection needs --vocab-size");
  std::string table = cost_table_header() + "\n";
  std::vector<std::string> artifacts{"cost_report.txt"};
  for (const auto& path : c.genes) {
    const Gene g = read_gene_file(path);
    std::string stem = fs::path(path).filename().string();
    for (const char* ext : {".gene.json", ".json"}) {
      if (stem.size() > std::strlen(ext) && stem.ends_with(ext)) {
        stem.resize(stem.size() - std::strlen(ext));
        break;
      }
    }
    const CostReport r = cost_report(g, opt);
    table += cost_table_row(stem, r) + "\n";
    std::ofstream(path_in(out, stem + ".cost.json")) << encode_cost_report(r);
    artifacts.push_back(stem + ".cost.json");
  }
  std::ofstream(path_in(out, "cost_report.txt")) << table;
  std::cout << table;
  write_manifest(out, {"cost-report", effective_config(sub), c.common.seed, artifacts});
}

struct TrainSubnetCmd {
  Common common;
  DatasetSpec data;
  ScheduleOpts sched;
  std::string gene_path;
  std::string supernet_path;
  std::string space_path;
  int max_positions = 64;
};

void run_train_subnet(const TrainSubnetCmd& c, const CLI::App* sub) {
  const std::string out = resolve_output_dir(c.common.out, "train-subnet");
  const Gene gene = read_gene_file(c.gene_path);
  const Dataset ds = load_dataset(c.data);
  const ModelDims dims = dims_for(ds.train, c.max_positions);
  ParamStore store;
  if (!c.supernet_path.empty()) {
    if (c.space_path.empty()) throw ConfigError("--supernet needs --space");
    const Supernet net = load_supernet(c.supernet_path, read_space_file(c.space_path));
    if (!(net.dims() == dims)) throw ConfigError("supernet vocabulary/positions do not match the dataset");
    store = materialize(net, extract_subnet(net, gene));
  } else {
    store = ParamStore::initialized(parameter_layout(gene, dims), c.common.seed);
  }
  TrainOutputs outputs{path_in(out, "metrics.jsonl"), path_in(out, "checkpoints"), c.sched.log_every};
  const TrainResult r = train_model(store, gene, dims, ds.train, c.sched.schedule(c.common.seed), outputs);
  save_model(path_in(out, "model.ckpt"), store, gene, dims);
  std::ofstream(path_in(out, "vocab.txt")) << ds.train.vocab.serialize();
  write_gene_file(path_in(out, "gene.json"), gene);
  const auto slices = parameter_layout(gene, dims);
  ordered_json ev{{"steps", r.log.size()},
                  {"final_train_loss", r.log.back().loss},
                  {"valid_loss", evaluate(store, slices, gene, dims, ds.valid, EvalMode::Loss)},
                  {"valid_token_accuracy", evaluate(store, slices, gene, dims, ds.valid, EvalMode::TokenAccuracy)}};
  write_json(path_in(out, "eval.json"), ev);
  std::cout << ev.dump(2) << "\n";
  write_manifest(out, {"train-subnet", effective_config(sub), c.common.seed,
                       {"model.ckpt", "metrics.jsonl", "checkpoints/", "vocab.txt", "gene.json", "eval.json"}});
}

struct EvalCmd {
  Common common;
  DatasetSpec data;
  LengthOpts lengths;
  std::string model_path;
  std::vector<std::string> modes{"loss", "token_accuracy", "corpus_bleu"};
  std::string routing_trace;
  bool latency = false;
  int passes = kGoldPasses;
};

void run_eval(const EvalCmd& c, const CLI::App* sub) {
  const std::string out = resolve_output_dir(c.common.out, "eval");
  Gene gene;
  ModelDims dims;
  const ParamStore store = load_model(c.model_path, gene, dims);
  const Dataset ds = load_dataset(c.data);
  if (ds.valid.vocab_size() != dims.vocab) throw ConfigError("dataset vocabulary does not match the model");
  const auto slices = parameter_layout(gene, dims);
  ordered_json res{{"pairs", ds.valid.size()}};
  for (const auto& m : c.modes) res[m] = evaluate(store, slices, gene, dims, ds.valid, parse_eval_mode(m));
  std::vector<std::string> artifacts{"eval.json"};
  if (!c.routing_trace.empty()) {
    Tape tape(false);
    const BoundWeights w = bind_weights(tape, store, slices);
    const Batch batch = corpus_batches(head(ds.valid, 64), 64).front();
    const ForwardResult f = forward(tape, w, gene, batch);
    const std::string trace = path_in(out, c.routing_trace);
    if (fs::exists(trace)) fs::remove(trace);
    write_routing_trace(trace, batch, f.routing);
    res["routing_entropy"] = routing_entropy(f.routing);
    artifacts.push_back(c.routing_trace);
  }
  if (c.latency) {
    LatencySpec spec;
    spec.passes = c.passes;
    spec.src_len = c.lengths.src_len;
    spec.tgt_len = c.lengths.tgt_len;
    const LatencyResult lr = measure(gene, store, slices, dims, spec, c.common.seed);
    append_latency_log(path_in(out, "latency.jsonl"), gene, spec, lr);
    res["latency_ms"] = lr.total_ms;
    res["encoder_ms"] = lr.encoder_ms;
    res["decoder_share"] = lr.decoder_share();
    artifacts.push_back("latency.jsonl");
  }
  write_json(path_in(out, "eval.json"), res);
  std::cout << res.dump(2) << "\n";
  write_manifest(out, {"eval", effective_config(sub), c.common.seed, artifacts, c.latency});
}

struct AnalyzeCmd {
  Common common;
  std::string dir;
};

void run_analyze(const AnalyzeCmd& c, const CLI::App* sub) {
  const AnalysisReport report = analyze_directory(c.dir);
  const std::string out = resolve_output_dir(c.common.out, "analyze");
  const std::string text = render_report(report);
  std::ofstream(path_in(out, "report.txt")) << text;
  std::cout << text;
  std::vector<std::string> artifacts{"report.txt"};
  for (const auto& p : write_report_svgs(report, out)) artifacts.push_back(fs::path(p).filename().string());
  write_manifest(out, {"analyze", effective_config(sub), c.common.seed, artifacts});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous mixture-of-experts architecture search"};
  app.require_subcommand(1);

  TrainSupernetCmd ts;
  auto* ts_sub = app.add_subcommand("train-supernet", "Single-path training of the weight-sharing supernet");
  add_common(ts_sub, ts.common);
  add_dataset(ts_sub, ts.data);
  add_schedule(ts_sub, ts.sched);
  ts_sub->add_option("--space", ts.space_path, "Search space JSON")->required();
  ts_sub->add_option("--max-positions", ts.max_positions)->capture_default_str();

  SearchCmd se;
  auto* se_sub = app.add_subcommand("search", "Evolutionary search over the supernet");
  add_common(se_sub, se.common);
  add_dataset(se_sub, se.data);
  add_lengths(se_sub, se.lengths);
  se_sub->add_option("--space", se.space_path)->required();
  se_sub->add_option("--supernet", se.supernet_path, "Checkpoint from train-supernet")->required();
  se_sub->add_option("--iterations", se.evo.num_iterations)->capture_default_str();
  se_sub->add_option("--population", se.evo.num_population)->capture_default_str();
  se_sub->add_option("--parents", se.evo.num_parents)->capture_default_str();
  se_sub->add_option("--mutations", se.evo.num_mutations)->capture_default_str();
  se_sub->add_option("--crossovers", se.evo.num_crossover)->capture_default_str();
  se_sub->add_option("--mutate-prob", se.evo.mutate_prob)->capture_default_str();
  se_sub->add_option("--flops-limit", se.flops_limit, "Absolute FLOPs ceiling");
  se_sub->add_option("--flops-fraction", se.flops_fraction, "FLOPs ceiling as a fraction of the max gene");
  se_sub->add_option("--latency-limit-ms", se.latency_limit_ms, "Latency ceiling (measured on this host)");
  se_sub->add_flag("--unconstrained", se.unconstrained, "Allow a search with no constraint");
  se_sub->add_option("--valid-pairs", se.valid_pairs, "Validation pairs used for fitness (0 = all)")->capture_default_str();

  CostReportCmd cr;
  auto* cr_sub = app.add_subcommand("cost-report", "Parameters, active parameters, sparsity and FLOPs");
  add_common(cr_sub, cr.common);
  add_lengths(cr_sub, cr.lengths);
  cr_sub->add_option("--gene", cr.genes, "Gene file(s)")->required();
  cr_sub->add_flag("--include-output-projection", cr.include_output);
  cr_sub->add_option("--vocab-size", cr.vocab_size, "Vocabulary for the output projection");

  TrainSubnetCmd tn;
  auto* tn_sub = app.add_subcommand("train-subnet", "Train one architecture from scratch or from supernet weights");
  add_common(tn_sub, tn.common);
  add_dataset(tn_sub, tn.data);
  add_schedule(tn_sub, tn.sched);
  tn_sub->add_option("--gene", tn.gene_path)->required();
  tn_sub->add_option("--supernet", tn.supernet_path, "Initialize from this supernet's front blocks");
  tn_sub->add_option("--space", tn.space_path, "Space of --supernet");
  tn_sub->add_option("--max-positions", tn.max_positions)->capture_default_str();

  EvalCmd ev;
  auto* ev_sub = app.add_subcommand("eval", "Evaluate a trained model on the validation split");
  add_common(ev_sub, ev.common);
  add_dataset(ev_sub, ev.data);
  add_lengths(ev_sub, ev.lengths);
  ev_sub->add_option("--model", ev.model_path, "Checkpoint from train-subnet")->required();
  ev_sub->add_option("--mode", ev.modes, "loss | token_accuracy | corpus_bleu (repeatable)");
  ev_sub->add_option("--routing-trace", ev.routing_trace, "Write a JSONL routing trace with this file name");
  ev_sub->add_flag("--latency", ev.latency, "Also time translation passes");
  ev_sub->add_option("--passes", ev.passes)->capture_default_str();

  AnalyzeCmd an;
  auto* an_sub = app.add_subcommand("analyze", "Expert placement and cost statistics of a gene directory");
  add_common(an_sub, an.common);
  an_sub->add_option("--dir", an.dir, "Directory of *.gene.json (e.g. a search's pareto/)")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty() && args[0].rfind("-", 0) != 0) args = expand_config(args);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kOk : kConfigError;
    }
    if (ts_sub->parsed()) run_train_supernet(ts, ts_sub);
    if (se_sub->parsed()) run_search(se, se_sub);
    if (cr_sub->parsed()) run_cost_report(cr, cr_sub);
    if (tn_sub->parsed()) run_train_subnet(tn, tn_sub);
    if (ev_sub->parsed()) run_eval(ev, ev_sub);
    if (an_sub->parsed()) run_analyze(an, an_sub);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error at step " << e.step() << ": " << e.what();
    if (!e.last_checkpoint().empty()) std::cerr << " (last checkpoint " << e.last_checkpoint() << ")";
    std::cerr << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
