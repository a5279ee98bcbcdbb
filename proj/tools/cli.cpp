/* Copyright 2026 The firp-infer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "firp/base_training.hpp"
#include "firp/checkpoint.hpp"
#include "firp/corpus.hpp"
#include "firp/errors.hpp"
#include "firp/firp_train.hpp"
#include "firp/harness.hpp"
#include "firp/tree_search.hpp"

namespace firp::cli {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t env_seed() {
  const char* s = std::getenv("FIRP_SEED");
  if (!s || !*s) return 1;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("FIRP_SEED must be a non-negative integer, got '") + s + "'");
  }
}

struct CorpusOpts {
  std::string path;
  int synthetic_lines = 2000;
  std::uint64_t corpus_seed = 1;
  std::string split = "test";
  long max_train_tokens = 0;

  void add(CLI::App* app, bool eval) {
    app->add_option("--corpus", path, "UTF-8 text file (default: synthetic periodic corpus)");
    app->add_option("--synthetic-lines", synthetic_lines, "lines of the synthetic corpus")->check(CLI::PositiveNumber);
    app->add_option("--corpus-seed", corpus_seed, "seed for corpus generation and splitting");
    app->add_option("--max-train-tokens", max_train_tokens, "truncate the training split (0 = all)");
    if (eval) app->add_option("--split", split, "evaluation split")->check(CLI::IsMember({"validation", "test"}));
  }
  Corpus load() const {
    if (!path.empty()) return ingest_corpus(path, {0.8, 0.1, 0.1}, corpus_seed);
    return make_corpus(periodic_text(synthetic_lines, corpus_seed), {0.8, 0.1, 0.1}, corpus_seed);
  }
  std::vector<int> train(const Corpus& c) const {
    auto t = c.train_tokens();
    if (max_train_tokens > 0 && static_cast<long>(t.size()) > max_train_tokens) t.resize(max_train_tokens);
    return t;
  }
  std::vector<int> eval(const Corpus& c) const { return split == "validation" ? c.validation_tokens() : c.test_tokens(); }
  nlohmann::json to_json() const {
    return {{"corpus", path.empty() ? "synthetic" : path}, {"synthetic_lines", synthetic_lines},
            {"corpus_seed", corpus_seed}, {"split", split}};
  }
};

struct TrainOpts {
  int epochs = 2;
  int batch_size = 4;
  int seq_len = 64;
  double lr = 1e-3;
  bool masked = false;

  void add(CLI::App* app, bool with_mask) {
    app->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
    app->add_option("--train-seq-len", seq_len, "training window length")->check(CLI::Range(2, 1 << 16));
    app->add_option("--lr", lr)->check(CLI::PositiveNumber);
    if (with_mask) app->add_flag("--masked", masked, "hide earlier-step pseudo rows from later steps");
  }
  FirpTrainConfig config(std::uint64_t seed, std::ostream& err) const {
    FirpTrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.seq_len = seq_len;
    c.adam.lr = lr;
    c.seed = seed;
    c.visibility = masked ? PseudoVisibility::kMasked : PseudoVisibility::kCurriculum;
    c.on_step = [&err](int step, double loss) {
      if (step % 100 == 0) err << "  update " << step << " loss " << loss << "\n";
    };
    return c;
  }
};

struct ProtocolOpts {
  ProbeConfig probe;
  int seeds = 5;
  int max_rank = kDefaultMaxRank;

  void add(CLI::App* app) {
    app->add_option("--sequences", probe.sequences)->check(CLI::PositiveNumber);
    app->add_option("--probe-seq-len", probe.seq_len)->check(CLI::PositiveNumber);
    app->add_option("--points-per-sequence", probe.points_per_sequence)->check(CLI::PositiveNumber);
    app->add_option("--min-prefix", probe.min_prefix)->check(CLI::PositiveNumber);
    app->add_option("--seeds", seeds, "number of probe seeds, starting at --seed")->check(CLI::PositiveNumber);
    app->add_option("--max-rank", max_rank)->check(CLI::PositiveNumber);
  }
  ProbeProtocol protocol(std::uint64_t seed) const {
    ProbeProtocol p;
    p.probe = probe;
    p.max_rank = max_rank;
    p.seeds.clear();
    for (int i = 0; i < seeds; ++i) p.seeds.push_back(seed + static_cast<std::uint64_t>(i));
    return p;
  }
};

struct OutputOpts {
  std::string json_path;
  std::string csv_path;
  void add(CLI::App* app, bool csv = true) {
    app->add_option("--out", json_path, "write the JSON result here");
    if (csv) app->add_option("--csv", csv_path, "write report series as CSV");
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write '" + path + "'");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void emit_report(const ExperimentReport& r, const OutputOpts& o, std::ostream& out) {
  r.validate();
  if (!o.json_path.empty()) write_file(o.json_path, r.to_json().dump(2) + "\n");
  if (!o.csv_path.empty()) write_file(o.csv_path, r.to_csv());
  out << r.to_json().dump() << "\n";
}

TreeTemplate load_template(const std::string& path, const ProjectionSet& ps) {
  if (path.empty()) return TreeTemplate::chain(ps.K());
  try {
    return TreeTemplate::from_json(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError("'" + path + "': " + e.what());
  }
}

DraftMode parse_mode(const std::string& s) { return s == "two-pass" ? DraftMode::kTwoPass : DraftMode::kFused; }

const char* error_kind(const Error& e) {
  if (dynamic_cast<const DependencyError*>(&e)) return "dependency error";
  if (dynamic_cast<const IoError*>(&e)) return "i/o error";
  if (dynamic_cast<const DataError*>(&e)) return "data error";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter error";
  if (dynamic_cast<const TemplateError*>(&e)) return "template error";
  if (dynamic_cast<const TableError*>(&e)) return "table error";
  if (dynamic_cast<const CapacityError*>(&e)) return "capacity error";
  if (dynamic_cast<const TrainingError*>(&e)) return "training error";
  if (dynamic_cast<const VocabularyError*>(&e)) return "vocabulary error";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension error";
  return "error";
}

// --- commands -------------------------------------------------------------

struct TrainBaseOpts {
  CorpusOpts corpus;
  std::string out_path;
  ModelConfig model;
  std::string position = "rotary";
  BaseTrainConfig train;
};

void train_base(const TrainBaseOpts& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  ModelConfig cfg = o.model;
  cfg.position_encoding = o.position == "learned" ? PositionEncoding::kLearned : PositionEncoding::kRotary;
  cfg.vocab_size = ByteTokenizer::kVocabSize;
  cfg.validate();
  const auto corpus = o.corpus.load();
  BaseTrainConfig hp = o.train;
  hp.seed = seed;
  hp.on_step = [&err](int step, double loss) {
    if (step % 50 == 0) err << "  step " << step << " loss " << loss << "\n";
  };
  const auto res = train_base_model(o.corpus.train(corpus), cfg, hp);
  save_checkpoint(o.out_path, {cfg, res.weights, {}});
  const Model model(cfg, res.weights);
  out << nlohmann::json{{"command", "train-base"},
                        {"checkpoint", o.out_path},
                        {"initial_loss", res.initial_loss},
                        {"final_loss", res.final_loss},
                        {"validation_loss", evaluate_lm_loss(model, corpus.validation_tokens(), hp.seq_len)},
                        {"config", cfg.to_json()},
                        {"seed", seed}}
             .dump()
      << "\n";
}

struct TrainFirpOpts {
  CorpusOpts corpus;
  TrainOpts train;
  std::string checkpoint, out_path;
  int step = 0;
  int layer = 0;
};

void train_firp(const TrainFirpOpts& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  auto ck = load_checkpoint(o.checkpoint);
  auto& ps = ck.projections;
  if (ps.K() < o.step - 1) {
    throw DependencyError("train-firp --step " + std::to_string(o.step) + " needs steps 1.." +
                          std::to_string(o.step - 1) + " trained first; '" + o.checkpoint + "' holds " +
                          std::to_string(ps.K()));
  }
  if (o.step > 1 && ps.masked != o.train.masked) {
    throw ParameterError(std::string("earlier steps were trained ") + (ps.masked ? "with" : "without") +
                         " --masked; pass the same visibility for every step");
  }
  if (ps.K() >= o.step) {
    err << "retraining step " << o.step << "; dropping steps " << o.step << ".." << ps.K() << "\n";
    ps.projections.resize(static_cast<std::size_t>(o.step - 1));
  }
  ps.masked = o.train.masked;
  const int L = ck.config.n_layers;
  int layer = o.layer;
  if (layer == 0) layer = o.step == 1 ? L / 2 : ps.step(o.step - 1).layer + 1;
  if (layer >= L || (o.step > 1 && layer <= ps.step(o.step - 1).layer)) {
    throw ParameterError("step " + std::to_string(o.step) + " layer " + std::to_string(layer) +
                         " must exceed the previous step's layer and stay below " + std::to_string(L) +
                         "; pass --layer");
  }

  const Model model(ck.config, ck.weights);
  const auto corpus = o.corpus.load();
  const auto cfg = o.train.config(seed, err);
  auto init = init_projection(o.step, layer, ck.config.d_model, seed, cfg.init_noise);
  const auto heldout = corpus.validation_tokens();
  const double before = evaluate_firp_loss(model, heldout, init, ps.projections, cfg.visibility, cfg.seq_len);
  err << "training step " << o.step << " at layer " << layer << "\n";
  auto res = train_projection(model, o.corpus.train(corpus), init, ps.projections, cfg);
  const double after = evaluate_firp_loss(model, heldout, res.projection, ps.projections, cfg.visibility, cfg.seq_len);
  ps.projections.push_back(res.projection);
  const std::string dest = o.out_path.empty() ? o.checkpoint : o.out_path;
  save_checkpoint(dest, ck);
  out << nlohmann::json{{"command", "train-firp"}, {"checkpoint", dest},
                        {"step", o.step},          {"layer", layer},
                        {"masked", ps.masked},     {"updates", res.losses.size()},
                        {"heldout_kl_before", before}, {"heldout_kl_after", after},
                        {"seed", seed}}
             .dump()
      << "\n";
}

struct DecodeOpts {
  std::string checkpoint, prompt_file, template_path, mode = "fused";
  int max_new = 64;
};

void decode(const DecodeOpts& o, std::ostream& out) {
  const auto ck = load_checkpoint(o.checkpoint);
  const Model model(ck.config, ck.weights);
  const auto tmpl = load_template(o.template_path, ck.projections);
  std::ifstream f(o.prompt_file);
  if (!f) throw IoError("cannot read prompt file '" + o.prompt_file + "'");
  std::vector<std::string> prompts;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) prompts.push_back(line);
  }
  if (prompts.empty()) throw DataError("prompt file '" + o.prompt_file + "' has no prompts");
  const ByteTokenizer tok;
  const SpeculativeDecoder decoder(model, ck.projections, parse_mode(o.mode));
  DecodeMetrics total;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto ids = tok.encode(prompts[i]);
    const auto res = decoder.decode(ids, o.max_new, tmpl);
    total.merge(res.metrics);
    auto line = res.metrics.to_json();
    line["prompt"] = i;
    line["text"] = tok.decode(std::vector<int>(res.tokens.begin() + static_cast<std::ptrdiff_t>(ids.size()), res.tokens.end()));
    out << line.dump() << "\n";
  }
  auto summary = total.to_json();
  summary["summary"] = true;
  summary["prompts"] = prompts.size();
  summary["template_size"] = tmpl.size();
  out << summary.dump() << "\n";
}

struct EvalOpts {
  CorpusOpts corpus;
  OutputOpts output;
  std::string checkpoint, template_path, mode = "fused";
  int prompts = 200;
  int prompt_len = 32;
  int max_new = 64;
  bool autoregressive = false;
};

void eval_accept_cmd(const EvalOpts& o, std::uint64_t seed, std::ostream& out) {
  const auto ck = load_checkpoint(o.checkpoint);
  const Model model(ck.config, ck.weights);
  const auto tmpl = load_template(o.template_path, ck.projections);
  const auto corpus = o.corpus.load();
  const auto prompts = sample_prompts(o.corpus.eval(corpus), o.prompts, o.prompt_len, seed);
  AcceptConfig ac;
  ac.max_new = o.max_new;
  ac.mode = parse_mode(o.mode);
  ac.autoregressive = o.autoregressive;
  const auto ev = eval_accept(model, ck.projections, tmpl, prompts, ac);
  auto rep = accept_report(ev, tmpl, ac, seed);
  rep.config["corpus"] = o.corpus.to_json();
  rep.config["prompt_len"] = o.prompt_len;
  emit_report(rep, o.output, out);
}

struct ProbeCmdOpts {
  CorpusOpts corpus;
  ProtocolOpts protocol;
  OutputOpts output;
  std::string checkpoint;
};

void calibrate_cmd(const ProbeCmdOpts& o, std::uint64_t seed, std::ostream& out) {
  const auto ck = load_checkpoint(o.checkpoint);
  if (ck.projections.K() == 0) throw DependencyError("calibrate needs trained projections");
  const Model model(ck.config, ck.weights);
  const auto corpus = o.corpus.load();
  const auto protocol = o.protocol.protocol(seed);
  const auto sets = protocol_points(model, o.corpus.eval(corpus), ck.projections.K(), protocol);
  const auto table = averaged_table(sets, firp_drafter(model, ck.projections), ck.projections.K(), protocol.max_rank);
  table.validate();
  const auto j = table.to_json();
  if (!o.output.json_path.empty()) write_file(o.output.json_path, j.dump(2) + "\n");
  out << j.dump() << "\n";
}

void probe_refine_cmd(const ProbeCmdOpts& o, std::uint64_t seed, std::ostream& out) {
  const auto ck = load_checkpoint(o.checkpoint);
  if (ck.projections.K() == 0) throw DependencyError("probe-refine needs trained projections");
  const Model model(ck.config, ck.weights);
  const auto corpus = o.corpus.load();
  const auto protocol = o.protocol.protocol(seed);
  const auto sets = protocol_points(model, o.corpus.eval(corpus), ck.projections.K(), protocol);
  auto rep = probe_refine(model, ck.projections, sets);
  rep.seed = seed;
  rep.config["protocol"] = protocol.to_json();
  rep.config["corpus"] = o.corpus.to_json();
  emit_report(rep, o.output, out);
}

struct SearchOpts {
  std::string table_path, out_path;
  int budget = 16;
};

void search_tree_cmd(const SearchOpts& o, std::ostream& out) {
  AccuracyTable table;
  try {
    table = AccuracyTable::from_json(read_json(o.table_path));
  } catch (const nlohmann::json::exception& e) {
    throw TableError("'" + o.table_path + "': " + e.what());
  }
  table.validate();
  const auto tmpl = greedy_tree_search(table, o.budget);
  if (!o.out_path.empty()) write_file(o.out_path, tmpl.to_json().dump(2) + "\n");
  out << nlohmann::json{{"template", tmpl.to_json()},
                        {"size", tmpl.size()},
                        {"expected_acceptance", expected_acceptance(tmpl, table)},
                        {"chain_expected_acceptance", expected_acceptance(TreeTemplate::chain(table.K()), table)}}
             .dump()
      << "\n";
}

struct StudyOpts {
  CorpusOpts corpus;
  TrainOpts train;
  ProtocolOpts protocol;
  OutputOpts output;
  std::string checkpoint;
  std::vector<int> layers;
  int step = 1;
  int layer2 = 0;
};

StudyConfig study_config(const StudyOpts& o, std::uint64_t seed, std::ostream& err) {
  StudyConfig s;
  s.train = o.train.config(seed, err);
  s.protocol = o.protocol.protocol(seed);
  return s;
}

void sweep_cmd(const StudyOpts& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(o.checkpoint);
  if (ck.projections.K() < o.step - 1) {
    throw DependencyError("sweep-layers --step " + std::to_string(o.step) + " needs steps 1.." +
                          std::to_string(o.step - 1) + " in the checkpoint");
  }
  std::vector<Projection> earlier(ck.projections.projections.begin(),
                                  ck.projections.projections.begin() + (o.step - 1));
  const Model model(ck.config, ck.weights);
  const auto corpus = o.corpus.load();
  auto rep = sweep_layers(model, o.corpus.train(corpus), o.corpus.eval(corpus), o.layers, o.step, earlier,
                          study_config(o, seed, err));
  rep.config["corpus"] = o.corpus.to_json();
  emit_report(rep, o.output, out);
}

void ablate_cmd(const StudyOpts& o, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(o.checkpoint);
  if (ck.projections.K() < 1) throw DependencyError("ablate-mask needs the step-1 projection in the checkpoint");
  const auto& step1 = ck.projections.step(1);
  const Model model(ck.config, ck.weights);
  const auto corpus = o.corpus.load();
  const int layer2 = o.layer2 ? o.layer2 : step1.layer + 1;
  auto res = ablate_mask(model, o.corpus.train(corpus), o.corpus.eval(corpus), step1, layer2, study_config(o, seed, err));
  res.report.config["corpus"] = o.corpus.to_json();
  emit_report(res.report, o.output, out);
}

struct BaselineOpts {
  StudyOpts study;
  std::string kind = "all";
  int K = 0;
};

void baseline_cmd(const BaselineOpts& b, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const auto& o = b.study;
  const auto ck = load_checkpoint(o.checkpoint);
  const Model model(ck.config, ck.weights);
  const int K = b.K ? b.K : (ck.projections.K() ? ck.projections.K() : 3);
  std::vector<int> layers = o.layers;
  if (layers.empty()) {
    if (ck.projections.K() >= K) {
      layers = ck.projections.layers();
      layers.resize(static_cast<std::size_t>(K));
    } else {
      for (int i = 1; i <= K; ++i) layers.push_back(std::min(ck.config.n_layers, ck.config.n_layers / 2 + i - 1));
    }
  }
  const auto corpus = o.corpus.load();
  const auto train = o.corpus.train(corpus);
  const auto cfg = study_config(o, seed, err);
  const auto sets = protocol_points(model, o.corpus.eval(corpus), K, cfg.protocol);
  std::vector<MethodTable> tables;
  // Keeps the truncated set alive for the drafter.
  ProjectionSet firp = ck.projections;
  if (firp.K() >= K) {
    firp.projections.resize(static_cast<std::size_t>(K));
    tables.push_back({"firp", averaged_table(sets, firp_drafter(model, firp), K, cfg.protocol.max_rank)});
  }
  std::vector<BaselineKind> kinds;
  if (b.kind == "all") {
    kinds = {BaselineKind::kMedusaHead, BaselineKind::kEarlyExit};
  } else {
    kinds = {parse_baseline_kind(b.kind)};
  }
  for (auto kind : kinds) {
    err << "training " << to_string(kind) << " heads\n";
    const auto heads = train_heads(kind, model, train, K, layers, cfg.train);
    tables.push_back({to_string(kind), averaged_table(sets, head_drafter(model, heads), K, cfg.protocol.max_rank)});
  }
  auto rep = compare_methods(tables, cfg.protocol);
  rep.seed = seed;
  rep.config["K"] = K;
  rep.config["early_exit_layers"] = layers;
  rep.config["train"] = {{"epochs", cfg.train.epochs}, {"lr", cfg.train.adam.lr}, {"seq_len", cfg.train.seq_len}};
  rep.config["corpus"] = o.corpus.to_json();
  emit_report(rep, o.output, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"firp: speculative decoding with pseudo hidden states on a toy transformer"};
  app.name("firp");
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed_opt;
  app.add_option("--seed", seed_opt, "global seed (default: FIRP_SEED or 1)");

  TrainBaseOpts tb;
  auto* c_tb = app.add_subcommand("train-base", "train the base language model");
  tb.corpus.add(c_tb, false);
  c_tb->add_option("--out", tb.out_path, "checkpoint to write")->required();
  c_tb->add_option("--d-model", tb.model.d_model)->check(CLI::PositiveNumber);
  c_tb->add_option("--layers", tb.model.n_layers)->check(CLI::PositiveNumber);
  c_tb->add_option("--heads", tb.model.n_heads)->check(CLI::PositiveNumber);
  c_tb->add_option("--d-ff", tb.model.d_ff)->check(CLI::PositiveNumber);
  c_tb->add_option("--max-seq-len", tb.model.max_seq_len)->check(CLI::PositiveNumber);
  c_tb->add_option("--position", tb.position)->check(CLI::IsMember({"rotary", "learned"}));
  c_tb->add_flag("--tie-embeddings", tb.model.tie_embeddings);
  c_tb->add_option("--steps", tb.train.steps)->check(CLI::PositiveNumber);
  c_tb->add_option("--batch-size", tb.train.batch_size)->check(CLI::PositiveNumber);
  c_tb->add_option("--train-seq-len", tb.train.seq_len)->check(CLI::Range(2, 1 << 16));
  c_tb->add_option("--lr", tb.train.adam.lr)->check(CLI::PositiveNumber);

  TrainFirpOpts tf;
  auto* c_tf = app.add_subcommand("train-firp", "train the step-i projection (steps in order)");
  tf.corpus.add(c_tf, false);
  tf.train.add(c_tf, true);
  c_tf->add_option("--checkpoint", tf.checkpoint, "model checkpoint, updated in place unless --out")->required();
  c_tf->add_option("--out", tf.out_path);
  c_tf->add_option("--step", tf.step)->required()->check(CLI::PositiveNumber);
  c_tf->add_option("--layer", tf.layer, "injection layer (default: n_layers/2, then previous + 1)")
      ->check(CLI::PositiveNumber);

  DecodeOpts dc;
  auto* c_dc = app.add_subcommand("decode", "speculative decoding of each line of a prompt file");
  c_dc->add_option("--checkpoint", dc.checkpoint)->required();
  c_dc->add_option("--prompt-file", dc.prompt_file)->required();
  c_dc->add_option("--max-new", dc.max_new)->check(CLI::NonNegativeNumber);
  c_dc->add_option("--template", dc.template_path, "tree template JSON (default: chain of K)");
  c_dc->add_option("--mode", dc.mode)->check(CLI::IsMember({"fused", "two-pass"}));

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval-accept", "mean acceptance over sampled prompts");
  ev.corpus.add(c_ev, true);
  ev.output.add(c_ev);
  c_ev->add_option("--checkpoint", ev.checkpoint)->required();
  c_ev->add_option("--template", ev.template_path);
  c_ev->add_option("--mode", ev.mode)->check(CLI::IsMember({"fused", "two-pass"}));
  c_ev->add_option("--prompts", ev.prompts)->check(CLI::PositiveNumber);
  c_ev->add_option("--prompt-len", ev.prompt_len)->check(CLI::PositiveNumber);
  c_ev->add_option("--max-new", ev.max_new)->check(CLI::NonNegativeNumber);
  c_ev->add_flag("--autoregressive", ev.autoregressive, "plain greedy decoding baseline");

  ProbeCmdOpts ca;
  auto* c_ca = app.add_subcommand("calibrate", "per-step, per-rank draft accuracy table");
  ca.corpus.add(c_ca, true);
  ca.protocol.add(c_ca);
  ca.output.add(c_ca, false);
  c_ca->add_option("--checkpoint", ca.checkpoint)->required();

  SearchOpts st;
  auto* c_st = app.add_subcommand("search-tree", "greedy tree template from an accuracy table");
  c_st->add_option("--table", st.table_path)->required();
  c_st->add_option("--budget", st.budget)->check(CLI::PositiveNumber);
  c_st->add_option("--out", st.out_path, "write the template JSON here");

  ProbeCmdOpts pr;
  auto* c_pr = app.add_subcommand("probe-refine", "cosine similarity of pseudo and real states per layer");
  pr.corpus.add(c_pr, true);
  pr.protocol.add(c_pr);
  pr.output.add(c_pr);
  c_pr->add_option("--checkpoint", pr.checkpoint)->required();

  StudyOpts sw;
  auto* c_sw = app.add_subcommand("sweep-layers", "train one projection per candidate layer");
  sw.corpus.add(c_sw, true);
  sw.train.add(c_sw, true);
  sw.protocol.add(c_sw);
  sw.output.add(c_sw);
  c_sw->add_option("--checkpoint", sw.checkpoint)->required();
  c_sw->add_option("--layers", sw.layers, "candidate layers")->required()->delimiter(',');
  c_sw->add_option("--step", sw.step)->check(CLI::Range(1, 64));

  StudyOpts ab;
  auto* c_ab = app.add_subcommand("ablate-mask", "step 2 with and without sight of step-1 pseudo rows");
  ab.corpus.add(c_ab, true);
  ab.train.add(c_ab, false);
  ab.protocol.add(c_ab);
  ab.output.add(c_ab);
  c_ab->add_option("--checkpoint", ab.checkpoint)->required();
  c_ab->add_option("--layer2", ab.layer2, "step-2 layer (default: step-1 layer + 1)")->check(CLI::PositiveNumber);

  BaselineOpts bl;
  auto* c_bl = app.add_subcommand("baseline", "medusa_head / early_exit heads against the projections");
  bl.study.corpus.add(c_bl, true);
  bl.study.train.add(c_bl, false);
  bl.study.protocol.add(c_bl);
  bl.study.output.add(c_bl);
  c_bl->add_option("--checkpoint", bl.study.checkpoint)->required();
  c_bl->add_option("--kind", bl.kind)->check(CLI::IsMember({"medusa_head", "early_exit", "all"}));
  c_bl->add_option("--K", bl.K, "steps (default: checkpoint K)")->check(CLI::PositiveNumber);
  c_bl->add_option("--layers", bl.study.layers, "early_exit layer per step")->delimiter(',');

  std::uint64_t seed = 1;
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    seed = seed_opt ? *seed_opt : env_seed();
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    err << "run 'firp --help' for usage\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_tb->parsed()) train_base(tb, seed, out, err);
    else if (c_tf->parsed()) train_firp(tf, seed, out, err);
    else if (c_dc->parsed()) decode(dc, out);
    else if (c_ev->parsed()) eval_accept_cmd(ev, seed, out);
    else if (c_ca->parsed()) calibrate_cmd(ca, seed, out);
    else if (c_st->parsed()) search_tree_cmd(st, out);
    else if (c_pr->parsed()) probe_refine_cmd(pr, seed, out);
    else if (c_sw->parsed()) sweep_cmd(sw, seed, out, err);
    else if (c_ab->parsed()) ablate_cmd(ab, seed, out, err);
    else if (c_bl->parsed()) baseline_cmd(bl, seed, out, err);
  } catch (const Error& e) {
    err << "firp: " << error_kind(e) << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "firp: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace firp::cli
