// End-to-end desk-scale pipeline on lookup-translate (vocab 64, len 12, 20K pairs):
// supernet SPOS training, FLOPs-constrained search at 50% of the max gene,
// then from-scratch training of the best gene and of the max gene.
//
//   acceptance_pipeline [--out DIR] [--steps N]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "automoe/corpus.hpp"
#include "automoe/cost_model.hpp"
#include "automoe/evo_search.hpp"
#include "automoe/supernet.hpp"
#include "automoe/trainer.hpp"

using namespace automoe;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(const char* what, double seconds) {
  std::fprintf(stderr, "[pipeline] %-28s %8.1f s\n", what, seconds);
}

}  // namespace

int main(int argc, char** argv) {
  std::string out = "pipeline_run";
  long steps = 5000;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) {
      out = argv[++i];
    } else if (std::strcmp(argv[i], "--steps") == 0 && i + 1 < argc) {
      steps = std::atol(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--out DIR] [--steps N]\n", argv[0]);
      return 2;
    }
  }
  const fs::path dir(out);
  fs::create_directories(dir);
  const auto t0 = Clock::now();

  try {
    const ParallelCorpus all = make_synthetic(SyntheticTask::LookupTranslate, 64, 12, 20000, 1);
    const auto [train, valid] = split_corpus(all, 1000, 1);
    const SearchSpace space = read_space_file(std::string(AUTOMOE_DATA_DIR) + "/spaces/desk.json");
    const ModelDims dims{all.vocab_size(), 32};

    TrainSchedule sched = desk_schedule(steps);
    sched.batch_tokens = 512;
    sched.lr_peak = 2e-3;
    sched.seed = 1;

    // (a) supernet
    auto t = Clock::now();
    Supernet net(space, dims, 1);
    TrainOutputs so;
    so.metrics_path = (dir / "supernet_metrics.jsonl").string();
    so.log_every = 50;
    train_supernet(net, train, sched, so);
    save_supernet((dir / "supernet.ckpt").string(), net);
    say("supernet training", since(t));

    // (b) search at half the max gene's FLOPs
    t = Clock::now();
    const double max_flops = count_flops(net.max()).total();
    std::vector<std::vector<int>> vs(valid.src.begin(), valid.src.begin() + 256);
    std::vector<std::vector<int>> vt(valid.tgt.begin(), valid.tgt.begin() + 256);
    std::vector<Batch> fitness_batches;
    for (std::size_t i = 0; i < vs.size(); i += 64) {
      fitness_batches.push_back(make_batch({vs.begin() + i, vs.begin() + i + 64}, {vt.begin() + i, vt.begin() + i + 64}));
    }
    EvoConfig evo;
    evo.num_iterations = 10;
    evo.num_population = 40;
    evo.num_parents = 10;
    evo.num_mutations = 15;
    evo.num_crossover = 15;
    evo.flops_limit = 0.5 * max_flops;
    evo.seed = 1;
    const EvoResult found = evolve(space, evo, [&](const Gene& g) { return estimate_fitness(net, g, fitness_batches); });
    write_history_jsonl((dir / "history.jsonl").string(), found);
    write_gene_file((dir / "best.gene.json").string(), found.best.gene);
    say("search", since(t));

    // (c) from-scratch training of the best and the max gene
    auto train_eval = [&](const Gene& g, const std::string& name) {
      const auto tt = Clock::now();
      const auto layout = parameter_layout(g, dims);
      ParamStore store = ParamStore::initialized(layout, 2);
      TrainOutputs o;
      o.metrics_path = (dir / (name + "_metrics.jsonl")).string();
      o.log_every = 50;
      train_model(store, g, dims, train, sched, o);
      save_model((dir / (name + ".ckpt")).string(), store, g, dims);
      const double acc = evaluate(store, layout, g, dims, valid, EvalMode::TokenAccuracy);
      say((name + " training").c_str(), since(tt));
      return acc;
    };
    const double acc_best = train_eval(found.best.gene, "best");
    const double acc_max = train_eval(net.max(), "max");

    const double flops_best = count_flops(found.best.gene).total();
    const double flops_pct = 100.0 * flops_best / max_flops;
    const double gap = 100.0 * (acc_max - acc_best);
    const double total = since(t0);
    const bool pass = gap <= 3.0 && flops_pct <= 55.0 && total < 7200.0;

    nlohmann::ordered_json summary;
    summary["steps"] = steps;
    summary["best_gene"] = nlohmann::json::parse(encode_gene(found.best.gene));
    summary["best_token_accuracy"] = acc_best;
    summary["max_token_accuracy"] = acc_max;
    summary["best_flops"] = flops_best;
    summary["max_flops"] = max_flops;
    summary["flops_pct_of_max"] = flops_pct;
    summary["runtime_s"] = total;
    summary["pass"] = pass;
    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";

    std::printf("criterion 9: %s  best gene %.2f%% vs max gene %.2f%% token accuracy (gap %.2f pts, limit 3); "
                "FLOPs %.1f%% of max (limit 55%%); %.0f s (limit 7200)\n",
                pass ? "PASS" : "FAIL", 100 * acc_best, 100 * acc_max, gap, flops_pct, total);
    return pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::printf("criterion 9: FAIL  exception: %s\n", e.what());
    return 1;
  }
}
