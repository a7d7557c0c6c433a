// apmae: command-line driver for the attention-pattern pipeline.
//
// Exit codes: 0 success, 2 usage error, 3 input/format error, 4 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "apmae/cluster.hpp"
#include "apmae/config.hpp"
#include "apmae/corpus.hpp"
#include "apmae/gbdt.hpp"
#include "apmae/intervention.hpp"
#include "apmae/lm.hpp"
#include "apmae/mae.hpp"
#include "apmae/motifs.hpp"
#include "apmae/pattern_store.hpp"
#include "apmae/plot.hpp"
#include "apmae/tasks.hpp"

namespace fs = std::filesystem;
using namespace apmae;

namespace {

struct Common {
  std::string config_path;
};

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? parse_pipeline_config("") : load_pipeline_config(c.config_path);
  std::cerr << "# resolved configuration\n" << render_pipeline_config(cfg);
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.empty()) return;
  io::atomic_write_text(p, text);
  std::cerr << "wrote " << p.string() << "\n";
}

TaskKind task_or_throw(const std::string& name) {
  const auto k = parse_task_kind(name);
  if (!k) throw ConfigError("unknown task '" + name + "'");
  return *k;
}

std::string json_text(const nlohmann::json& j) { return j.dump(1) + "\n"; }

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  Common c;
  std::string out;
  std::optional<std::uint64_t> files, seed;
};

int gen_corpus_cmd(const GenCorpusArgs& a) {
  const auto cfg = resolve(a.c);
  const auto files = gen_corpus(a.seed.value_or(cfg.corpus.seed), a.files.value_or(cfg.corpus.files));
  fs::create_directories(a.out);
  char name[32];
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::snprintf(name, sizeof name, "file_%05zu.java", i);
    io::atomic_write_text(fs::path(a.out) / name, files[i]);
  }
  std::cerr << "wrote " << files.size() << " files to " << a.out << "\n";
  return 0;
}

struct MineArgs {
  Common c;
  std::string corpus, out, stats;
};

int mine_cmd(const MineArgs& a) {
  const auto cfg = resolve(a.c);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(a.corpus))
    if (e.path().extension() == ".java") paths.push_back(e.path());
  if (paths.empty()) throw FormatError("no .java files in " + a.corpus);
  std::sort(paths.begin(), paths.end());
  std::vector<std::string> files;
  for (const auto& p : paths) files.push_back(io::read_text(p));
  const auto res = mine_instances(files, cfg.mine);
  write_instances(res.instances, a.out);
  std::string stats = "kind,name,count\n";
  for (const auto& [k, n] : res.per_kind) stats += "task," + std::string(to_string(k)) + "," + std::to_string(n) + "\n";
  for (const auto& [r, n] : res.skipped) stats += "skip," + std::string(to_string(r)) + "," + std::to_string(n) + "\n";
  std::cerr << stats;
  write_text(a.stats, stats);
  return 0;
}

struct TrainLmArgs {
  Common c;
  std::string instances, out, curve, accuracy;
};

int train_lm_cmd(const TrainLmArgs& a) {
  const auto cfg = resolve(a.c);
  const auto inst = read_instances(a.instances);
  Lm lm(cfg.lm, cfg.lm.seed);
  const auto rep = train_lm(lm, inst, [&](const LossPoint& p) {
    if (p.batch % 100 == 0) std::cerr << "step " << p.batch << " loss " << p.loss << "\n";
  });
  save_lm(lm, a.out);
  std::string acc = "task,correct,total,accuracy\n";
  for (const auto& [k, v] : rep.heldout)
    acc += std::string(to_string(k)) + "," + std::to_string(v.correct) + "," + std::to_string(v.total) + "," +
           detail::num(v.accuracy()) + "\n";
  std::cerr << "held-out first-token accuracy\n" << acc;
  write_text(a.curve, loss_curve_csv(rep.curve));
  write_text(a.accuracy, acc);
  return 0;
}

struct HarvestArgs {
  Common c;
  std::string lm, instances, out, records;
  std::optional<std::string> task;
};

int harvest_cmd(const HarvestArgs& a) {
  const auto cfg = resolve(a.c);
  const auto lm = load_lm(a.lm);
  auto inst = read_instances(a.instances);
  if (a.task) {
    const auto k = task_or_throw(*a.task);
    std::erase_if(inst, [&](const TaskInstance& i) { return i.task != k; });
  }
  HarvestOptions opt;
  opt.model_id = cfg.harvest.model_id;
  opt.subsample_ratio = cfg.harvest.subsample_ratio;
  opt.correct_only = cfg.harvest.correct_only;
  opt.balance = cfg.harvest.balance;
  opt.seed = cfg.harvest.seed;
  PatternWriter writer(a.out, static_cast<std::uint16_t>(lm.config().context_len), cfg.mae.scale_eps);
  const auto summary = harvest(lm, inst, opt, [&](AttentionPattern&& p) { writer.append(p); });
  writer.finish();
  std::cerr << "harvested " << summary.patterns << " patterns from " << summary.records.size() << " instances\n";
  write_text(a.records, records_tsv(summary.records));
  return 0;
}

struct TrainMaeArgs {
  Common c;
  std::string patterns, out, curve;
  std::size_t motifs = 10000;
};

int train_mae_cmd(const TrainMaeArgs& a) {
  const auto cfg = resolve(a.c);
  std::vector<AttentionPattern> data;
  if (a.patterns.empty()) {
    data = motif_corpus(a.motifs, cfg.mae.pattern_size, cfg.mae.seed).patterns;
    std::cerr << "training on " << data.size() << " synthetic motif patterns\n";
  } else {
    data = read_store(a.patterns);
  }
  Mae m(cfg.mae, cfg.mae.seed);
  const auto curve = train_mae(m, data, [&](const LossPoint& p) {
    if (p.batch % 100 == 0) std::cerr << "batch " << p.batch << " loss " << p.loss << "\n";
  });
  save_mae(m, a.out);
  std::cerr << "wrote " << a.out << "\n";
  write_text(a.curve, loss_curve_csv(curve));
  return 0;
}

struct EvalMaeArgs {
  std::string mae, patterns, out;
};

int eval_mae_cmd(const EvalMaeArgs& a) {
  auto m = load_mae(a.mae);
  const auto rep = evaluate_mae(m, read_store(a.patterns));
  const nlohmann::json j{{"mean", rep.mean}, {"stddev", rep.stddev}, {"count", rep.count}};
  std::cout << j.dump() << "\n";
  write_text(a.out, json_text(j));
  return 0;
}

struct CrossEvalArgs {
  std::vector<std::string> pairs;
  std::string out, csv;
};

int cross_eval_cmd(const CrossEvalArgs& a) {
  std::map<std::string, Mae> models;
  std::map<std::string, std::vector<AttentionPattern>> data;
  for (const auto& p : a.pairs) {
    const auto eq = p.find('='), colon = p.find(':', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || colon == std::string::npos)
      throw ConfigError("--pair expects name=model.ckpt:patterns.aptn, got '" + p + "'");
    const auto name = p.substr(0, eq);
    models.emplace(name, load_mae(p.substr(eq + 1, colon - eq - 1)));
    data.emplace(name, read_store(p.substr(colon + 1)));
  }
  std::map<std::string, Mae*> ptrs;
  for (auto& [k, m] : models) ptrs[k] = &m;
  const auto rep = cross_evaluate(ptrs, data);
  const auto table = render_cross_eval(rep);
  std::cout << table;
  write_text(a.out, table);
  write_text(a.csv, cross_eval_csv(rep));
  return 0;
}

struct EmbedArgs {
  std::string mae, patterns, out;
};

int embed_cmd(const EmbedArgs& a) {
  const auto m = load_mae(a.mae);
  PatternReader reader(a.patterns);
  std::vector<Embedding> rows;
  std::vector<PatchSet> batch;
  std::vector<std::pair<HeadKey, std::uint64_t>> keys;
  auto flush = [&] {
    if (batch.empty()) return;
    const auto emb = m.embed_batch(batch);
    for (std::size_t i = 0; i < emb.size(); ++i) rows.push_back({keys[i].first, keys[i].second, emb[i]});
    batch.clear();
    keys.clear();
  };
  while (auto p = reader.next()) {
    batch.push_back(m.tensorize(*p));
    keys.emplace_back(HeadKey{p->layer, p->head}, p->meta.sample_id);
    if (batch.size() == 256) flush();
  }
  flush();
  io::atomic_write_bytes(a.out, encode_embeddings(rows));
  std::cerr << "wrote " << rows.size() << " embeddings to " << a.out << "\n";
  return 0;
}

struct ClusterArgs {
  Common c;
  std::string embeddings, out, assignments;
};

int cluster_cmd(const ClusterArgs& a) {
  const auto cfg = resolve(a.c);
  const auto rows = decode_embeddings(io::read_file(a.embeddings));
  std::map<HeadKey, std::vector<std::size_t>> by_head;
  for (std::size_t i = 0; i < rows.size(); ++i) by_head[rows[i].head].push_back(i);
  std::vector<std::pair<HeadKey, std::vector<std::size_t>>> heads(by_head.begin(), by_head.end());
  std::vector<ClusterModel> models(heads.size());
  std::vector<std::vector<Assignment>> labels(heads.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t hh = 0; hh < static_cast<std::ptrdiff_t>(heads.size()); ++hh) {
    const auto h = static_cast<std::size_t>(hh);
    std::vector<std::vector<float>> emb;
    for (auto i : heads[h].second) emb.push_back(rows[i].values);
    auto fit = fit_cluster_model(heads[h].first, emb, cfg.cluster.min_cluster_size, cfg.cluster.out_dim);
    for (std::size_t k = 0; k < emb.size(); ++k)
      labels[h].push_back({heads[h].first, rows[heads[h].second[k]].sample_id, fit.labels[k]});
    models[h] = std::move(fit.model);
  }
  std::vector<Assignment> all;
  for (auto& l : labels) all.insert(all.end(), l.begin(), l.end());
  save_cluster_models(models, a.out);
  std::cerr << "wrote " << models.size() << " head models to " << a.out << "\n";
  write_text(a.assignments, assignments_tsv(all));
  return 0;
}

struct ClusterStatsArgs {
  std::string models, counts, histogram;
};

int cluster_stats_cmd(const ClusterStatsArgs& a) {
  const auto models = load_cluster_models(a.models);
  const auto st = cluster_stats(models);
  std::cout << cluster_histogram_csv(st);
  write_text(a.counts, cluster_counts_csv(st));
  write_text(a.histogram, cluster_histogram_csv(st));
  return 0;
}

struct ClassifyArgs {
  Common c;
  std::string assignments, records, out_dir;
  std::vector<std::string> tasks;
};

int classify_cmd(const ClassifyArgs& a) {
  const auto cfg = resolve(a.c);
  const auto assignments = parse_assignments(io::read_text(a.assignments));
  const auto records = parse_records(io::read_text(a.records));
  std::vector<TaskKind> kinds;
  if (a.tasks.empty()) {
    std::set<TaskKind> seen;
    for (const auto& r : records)
      if (r.correct) seen.insert(r.task);
    kinds.assign(seen.begin(), seen.end());
  } else {
    for (const auto& t : a.tasks) kinds.push_back(task_or_throw(t));
  }
  fs::create_directories(a.out_dir);
  std::vector<AccuracyRow> acc;
  for (auto kind : kinds) {
    const std::string name(to_string(kind));
    const auto table = balance_table(build_feature_table(assignments, records, kind), cfg.classify.seed);
    if (table.rows() == 0) {
      std::cerr << name << ": no labelled rows after balancing, skipped\n";
      continue;
    }
    const auto cv = cross_validate(table, cfg.classify);
    for (const auto& f : cv.folds)
      if (f.skipped) std::cerr << name << " fold " << f.fold << ": " << f.warning << "\n";
    save_feature_table(table, fs::path(a.out_dir) / (name + ".apft"));
    write_text(fs::path(a.out_dir) / (name + ".cv.json"), json_text(cv));
    acc.push_back({name, cv.mean_accuracy, cv.ci_half_width, cv.used_folds});
    std::cerr << name << ": accuracy " << cv.mean_accuracy << " +- " << cv.ci_half_width << " over " << cv.used_folds
              << " folds, " << table.rows() << " rows\n";
  }
  write_text(fs::path(a.out_dir) / "accuracy.csv", accuracy_csv(acc));
  return 0;
}

struct ShapArgs {
  std::string cv, table, out;
  double tolerance = 1e-6;
};

int shap_cmd(const ShapArgs& a) {
  const CVResult cv = nlohmann::json::parse(io::read_text(a.cv)).get<CVResult>();
  const auto table = load_feature_table(a.table);
  const auto s = head_importance(cv, table);
  std::cerr << "explained " << s.rows << " test rows, max efficiency error " << s.max_efficiency_error << "\n";
  write_text(a.out, shap_summary_csv(s));
  if (!(s.max_efficiency_error <= a.tolerance))
    throw NumericalError("Shapley efficiency error " + std::to_string(s.max_efficiency_error) + " exceeds tolerance");
  return 0;
}

struct InterveneArgs {
  Common c;
  std::string lm, instances, shap, task, out;
  std::vector<std::string> modes{"positive", "negative", "random"};
};

int intervene_cmd(const InterveneArgs& a) {
  const auto cfg = resolve(a.c);
  const auto lm = load_lm(a.lm);
  const auto inst = read_instances(a.instances);
  const auto summary = parse_shap_summary(io::read_text(a.shap));
  const auto kind = task_or_throw(a.task);
  const auto pools = build_pools(lm, inst, cfg.intervene.pool_size, cfg.intervene.seed, kind);
  std::cerr << "pools: " << pools.correct.size() << " correct, " << pools.incorrect.size() << " incorrect\n";
  const auto counts = schedule_counts(static_cast<std::size_t>(lm.config().layers) * lm.config().heads, cfg.intervene.max_count);
  std::vector<InterventionRow> rows;
  for (const auto& m : a.modes) {
    const auto mode = parse_select_mode(m);
    const std::uint32_t runs = mode == SelectMode::Random ? cfg.intervene.random_seeds : 1;
    for (std::uint32_t r = 0; r < runs; ++r) {
      const std::uint64_t seed = mode == SelectMode::Random ? r + 1 : 0;
      const auto sel = select_heads(summary, mode, counts.empty() ? 0 : counts.back(), Rng::mix(cfg.intervene.seed, seed));
      auto rep = run_schedule(lm, pools, sel.heads, counts, a.task, m, seed);
      if (rep.collapse_count)
        std::cerr << m << " seed " << seed << ": collapse at " << *rep.collapse_count
                  << (rep.recovered_after_collapse ? " (net recovered afterwards)" : "") << "\n";
      rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
    }
  }
  write_text(a.out, intervention_csv(rows));
  return 0;
}

struct SummarizeArgs {
  std::vector<std::string> in;
  std::string out;
};

int summarize_cmd(const SummarizeArgs& a) {
  std::vector<InterventionRow> rows;
  for (const auto& p : a.in) {
    auto r = parse_intervention_csv(io::read_text(p));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto csv = summary_csv(summarize(rows));
  std::cout << csv;
  write_text(a.out, csv);
  return 0;
}

struct PlotArgs {
  std::string kind, in, out, mae;
  std::size_t index = 0;
  std::uint64_t mask_seed = 0;
};

int plot_cmd(const PlotArgs& a) {
  PlotOutput p;
  if (a.kind == "recon-triptych") {
    if (a.mae.empty()) throw ConfigError("recon-triptych needs --mae");
    auto m = load_mae(a.mae);
    PatternReader reader(a.in);
    std::optional<AttentionPattern> pat;
    for (std::size_t i = 0; i <= a.index; ++i)
      if (!(pat = reader.next())) throw ConfigError("pattern index " + std::to_string(a.index) + " out of range");
    p = plot_recon_triptych(recon_panels(m, *pat, a.mask_seed));
  } else {
    const auto text = io::read_text(a.in);
    if (a.kind == "cluster-count") p = plot_cluster_count(parse_cluster_counts(text));
    else if (a.kind == "accuracy") p = plot_accuracy(parse_accuracy(text));
    else if (a.kind == "shap-map") p = plot_shap_map(parse_shap_summary(text));
    else if (a.kind == "intervention") p = plot_intervention(parse_intervention_csv(text));
    else throw ConfigError("unknown plot kind '" + a.kind + "'");
  }
  write_text(a.out + ".svg", p.svg);
  write_text(a.out + ".csv", p.csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef _OPENMP
  if (const char* t = std::getenv("APMAE_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
  CLI::App app{"attention-pattern masked autoencoder pipeline"};
  app.require_subcommand(1);
  std::function<int()> run;
  auto config_opt = [](CLI::App* s, Common& c) {
    s->add_option("--config", c.config_path, "pipeline configuration file")->check(CLI::ExistingFile);
  };

  GenCorpusArgs gc;
  auto* s = app.add_subcommand("gen-corpus", "generate the synthetic Java corpus");
  config_opt(s, gc.c);
  s->add_option("--out", gc.out, "output directory")->required();
  s->add_option("--files", gc.files, "number of files");
  s->add_option("--seed", gc.seed, "generator seed");
  s->callback([&] { run = [&] { return gen_corpus_cmd(gc); }; });

  MineArgs mi;
  s = app.add_subcommand("mine", "mine task instances from a corpus directory");
  config_opt(s, mi.c);
  s->add_option("--corpus", mi.corpus)->required()->check(CLI::ExistingDirectory);
  s->add_option("--out", mi.out, "instances TSV")->required();
  s->add_option("--stats", mi.stats, "per-task and skip counts CSV");
  s->callback([&] { run = [&] { return mine_cmd(mi); }; });

  TrainLmArgs tl;
  s = app.add_subcommand("train-lm", "train the toy fill-in-the-middle language model");
  config_opt(s, tl.c);
  s->add_option("--instances", tl.instances)->required()->check(CLI::ExistingFile);
  s->add_option("--out", tl.out, "checkpoint")->required();
  s->add_option("--curve", tl.curve, "loss curve CSV");
  s->add_option("--accuracy", tl.accuracy, "held-out first-token accuracy CSV");
  s->callback([&] { run = [&] { return train_lm_cmd(tl); }; });

  HarvestArgs hv;
  s = app.add_subcommand("harvest", "record attention patterns of the language model");
  config_opt(s, hv.c);
  s->add_option("--lm", hv.lm)->required()->check(CLI::ExistingFile);
  s->add_option("--instances", hv.instances)->required()->check(CLI::ExistingFile);
  s->add_option("--out", hv.out, "pattern store")->required();
  s->add_option("--records", hv.records, "per-instance records TSV")->required();
  s->add_option("--task", hv.task, "restrict to one task");
  s->callback([&] { run = [&] { return harvest_cmd(hv); }; });

  TrainMaeArgs tm;
  s = app.add_subcommand("train-mae", "train the masked autoencoder");
  config_opt(s, tm.c);
  s->add_option("--patterns", tm.patterns, "pattern store (default: synthetic motif corpus)")->check(CLI::ExistingFile);
  s->add_option("--motifs", tm.motifs, "synthetic corpus size when --patterns is absent");
  s->add_option("--out", tm.out, "checkpoint")->required();
  s->add_option("--curve", tm.curve, "loss curve CSV");
  s->callback([&] { run = [&] { return train_mae_cmd(tm); }; });

  EvalMaeArgs em;
  s = app.add_subcommand("eval-mae", "masked reconstruction loss on a pattern store");
  s->add_option("--mae", em.mae)->required()->check(CLI::ExistingFile);
  s->add_option("--patterns", em.patterns)->required()->check(CLI::ExistingFile);
  s->add_option("--out", em.out, "JSON report");
  s->callback([&] { run = [&] { return eval_mae_cmd(em); }; });

  CrossEvalArgs ce;
  s = app.add_subcommand("cross-eval", "evaluate every model on every dataset");
  s->add_option("--pair", ce.pairs, "name=model.ckpt:patterns.aptn")->required();
  s->add_option("--out", ce.out, "rendered table");
  s->add_option("--csv", ce.csv, "table as CSV");
  s->callback([&] { run = [&] { return cross_eval_cmd(ce); }; });

  EmbedArgs eb;
  s = app.add_subcommand("embed", "CLS embeddings of every stored pattern");
  s->add_option("--mae", eb.mae)->required()->check(CLI::ExistingFile);
  s->add_option("--patterns", eb.patterns)->required()->check(CLI::ExistingFile);
  s->add_option("--out", eb.out, "embedding store")->required();
  s->callback([&] { run = [&] { return embed_cmd(eb); }; });

  ClusterArgs cl;
  s = app.add_subcommand("cluster", "cluster embeddings per head");
  config_opt(s, cl.c);
  s->add_option("--embeddings", cl.embeddings)->required()->check(CLI::ExistingFile);
  s->add_option("--out", cl.out, "cluster model container")->required();
  s->add_option("--assignments", cl.assignments, "assignments TSV")->required();
  s->callback([&] { run = [&] { return cluster_cmd(cl); }; });

  ClusterStatsArgs cs;
  s = app.add_subcommand("cluster-stats", "clusters per head and per-layer histogram");
  s->add_option("--models", cs.models)->required()->check(CLI::ExistingFile);
  s->add_option("--counts", cs.counts, "per-head counts CSV");
  s->add_option("--histogram", cs.histogram, "per-layer histogram CSV");
  s->callback([&] { run = [&] { return cluster_stats_cmd(cs); }; });

  ClassifyArgs cf;
  s = app.add_subcommand("classify", "cross-validated correctness classifier per task");
  config_opt(s, cf.c);
  s->add_option("--assignments", cf.assignments)->required()->check(CLI::ExistingFile);
  s->add_option("--records", cf.records)->required()->check(CLI::ExistingFile);
  s->add_option("--task", cf.tasks, "task name (repeatable; default every labelled task)");
  s->add_option("--out-dir", cf.out_dir)->required();
  s->callback([&] { run = [&] { return classify_cmd(cf); }; });

  ShapArgs sh;
  s = app.add_subcommand("shap", "per-head Shapley summary of a cross-validation result");
  s->add_option("--cv", sh.cv)->required()->check(CLI::ExistingFile);
  s->add_option("--table", sh.table)->required()->check(CLI::ExistingFile);
  s->add_option("--out", sh.out, "SHAP summary CSV")->required();
  s->add_option("--tolerance", sh.tolerance, "allowed efficiency error");
  s->callback([&] { run = [&] { return shap_cmd(sh); }; });

  InterveneArgs iv;
  s = app.add_subcommand("intervene", "zero ranked heads and count flipped predictions");
  config_opt(s, iv.c);
  s->add_option("--lm", iv.lm)->required()->check(CLI::ExistingFile);
  s->add_option("--instances", iv.instances)->required()->check(CLI::ExistingFile);
  s->add_option("--shap", iv.shap)->required()->check(CLI::ExistingFile);
  s->add_option("--task", iv.task)->required();
  s->add_option("--mode", iv.modes, "positive, negative, neutral, random (repeatable)");
  s->add_option("--out", iv.out, "report CSV")->required();
  s->callback([&] { run = [&] { return intervene_cmd(iv); }; });

  SummarizeArgs sm;
  s = app.add_subcommand("summarize", "net change per mode and count across reports");
  s->add_option("--in", sm.in)->required()->check(CLI::ExistingFile);
  s->add_option("--out", sm.out, "summary CSV");
  s->callback([&] { run = [&] { return summarize_cmd(sm); }; });

  PlotArgs pl;
  s = app.add_subcommand("plot", "emit one SVG figure and its CSV data");
  s->add_option("--kind", pl.kind)
      ->required()
      ->check(CLI::IsMember({"recon-triptych", "cluster-count", "accuracy", "shap-map", "intervention"}));
  s->add_option("--in", pl.in)->required()->check(CLI::ExistingFile);
  s->add_option("--out", pl.out, "output prefix (writes .svg and .csv)");
  s->add_option("--mae", pl.mae, "checkpoint for recon-triptych");
  s->add_option("--index", pl.index, "pattern index for recon-triptych");
  s->add_option("--mask-seed", pl.mask_seed);
  s->callback([&] {
    if (pl.out.empty()) pl.out = fs::path(pl.in).replace_extension("").string() + "." + pl.kind;
    run = [&] { return plot_cmd(pl); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }
  try {
    return run();
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
