// Command-line front end: data generation, training, generation, evaluation,
// distribution analysis, variant benchmarking, and mask inspection.
//
// Exit codes: 0 success, 2 usage/config, 3 I/O or file format, 4 numeric
// failure. Every command writes a manifest JSON next to its outputs with the
// fully resolved configuration. MTPSLAB_THREADS caps worker parallelism.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtpslab/inference.hpp"
#include "mtpslab/masks.hpp"
#include "mtpslab/model.hpp"
#include "mtpslab/synthdata.hpp"
#include "mtpslab/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtpslab;

namespace {

constexpr const char* kToolVersion = "mtpslab 1.0.0";

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

struct Manifest {
  std::string command;
  json config;
  uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string started = utc_now();

  void write(const std::string& path) const {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["artifacts"] = artifacts;
    j["tool_version"] = kToolVersion;
    j["started_utc"] = started;
    j["finished_utc"] = utc_now();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path);
    out << j.dump(2) << "\n";
  }
};

json config_to_json_obj(const ModelConfig& cfg) {
  return json::parse(cfg.to_json());
}

/// Load a checkpoint and dispatch on its stored dtype.
template <typename F>
void with_model(const std::string& path, F&& fn) {
  const ModelConfig cfg =
      ModelConfig::from_json(ckpt::read_checkpoint_config_json(path));
  if (cfg.dtype == DtypeTag::f32) {
    auto model = DecoderModel<float>::load(path);
    fn(model);
  } else {
    auto model = DecoderModel<double>::load(path);
    fn(model);
  }
}

std::vector<int> parse_token_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(std::stoi(tok));
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out_dir;
  int64_t n_train = 20000;
  int64_t n_eval = 1000;
  uint64_t seed = 7;
  std::vector<int> len_range{4, 12};
  int t_symbols = 16;
  int r_max = 6;
  double p_ext = 0.2;
};

int cmd_gen_data(const GenDataArgs& a) {
  synth::SynthGrammar grammar;
  grammar.t_symbols = a.t_symbols;
  grammar.r_max = a.r_max;
  grammar.p_ext = a.p_ext;
  fs::create_directories(a.out_dir);
  const std::string train_path = a.out_dir + "/train.jsonl";
  const std::string eval_path = a.out_dir + "/eval.jsonl";
  Manifest mf;
  mf.command = "gen-data";
  mf.seed = a.seed;
  mf.config = {{"n_train", a.n_train},
               {"n_eval", a.n_eval},
               {"seed", a.seed},
               {"len_range", a.len_range},
               {"grammar", json::parse(grammar.to_json())}};
  synth::gen_corpus(grammar, a.n_train, a.len_range[0], a.len_range[1],
                    Rng::mix(a.seed, Rng::hash_str("train")), train_path);
  synth::gen_corpus(grammar, a.n_eval, a.len_range[0], a.len_range[1],
                    Rng::mix(a.seed, Rng::hash_str("eval")), eval_path);
  mf.artifacts = {train_path, eval_path};
  mf.write(a.out_dir + "/manifest.json");
  std::cout << "wrote " << train_path << " (" << a.n_train << " records), "
            << eval_path << " (" << a.n_eval << " records)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string out_dir;
  std::string variant = "ntp";
  int n = 0;  // --n: predicted tokens per step (Module Num)
  int g = 0;  // --g: group size
  double lambda = 0.5;
  int64_t steps = 5000;
  int batch_size = 8;
  double lr = 2e-4;
  double warmup_ratio = 0.03;
  uint64_t seed = 1;
  int64_t eval_every = 1000;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int backbone_layers = 4;
  int projector_layers = 2;
  int cs = 15;
  int ct = 5;
  double mask_mix = 0.5;
  std::string dtype = "f32";
  std::string pos_encoding = "rotary";
};

ModelConfig model_config_from(const TrainArgs& a,
                              const synth::SynthGrammar& grammar) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(a.variant);
  if (a.n > 0 && a.g > 0) {
    throw ConfigError(
        "train: pass --n (module count) or --g (group size), not both");
  }
  cfg.n = a.n > 0 ? a.n : (a.g > 0 ? a.g : 1);
  if (cfg.variant == Variant::ntp) cfg.n = 1;
  cfg.lambda = a.lambda;
  cfg.d_model = a.d_model;
  cfg.n_heads = a.n_heads;
  cfg.d_ff = a.d_ff;
  cfg.n_backbone_layers = a.backbone_layers;
  cfg.n_projector_layers = a.projector_layers;
  cfg.cs = a.cs;
  cfg.ct = a.ct;
  cfg.mask_mode_mix = a.mask_mix;
  cfg.dtype = dtype_from_string(a.dtype);
  cfg.pos_encoding = a.pos_encoding == "sinusoidal" ? PosEncoding::sinusoidal
                                                    : PosEncoding::rotary;
  cfg.v_speech = grammar.v_speech();
  cfg.v_text = grammar.t_symbols + 2;
  cfg.validate();
  return cfg;
}

template <typename T>
std::string run_train(const ModelConfig& cfg, const TrainArgs& a,
                      const std::vector<synth::CorpusRecord>& corpus) {
  auto model = DecoderModel<T>::init(cfg, a.seed);
  train::TrainConfig tc;
  tc.lr = a.lr;
  tc.warmup_ratio = a.warmup_ratio;
  tc.total_steps = a.steps;
  tc.batch_size = a.batch_size;
  tc.seed = a.seed;
  tc.eval_every = a.eval_every;
  tc.checkpoint_dir = a.out_dir;
  std::ofstream csv(a.out_dir + "/train_log.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + a.out_dir + "/train_log.csv");
  const auto result = train::train(model, corpus, tc, &csv);
  std::cout << "final loss " << result.log.back().loss << " after "
            << result.log.size() << " steps -> " << result.final_checkpoint
            << "\n";
  return result.final_checkpoint;
}

int cmd_train(const TrainArgs& a) {
  synth::SynthGrammar grammar;
  const auto corpus = synth::load_corpus(a.corpus, &grammar);
  if (corpus.empty()) throw ConfigError("train: corpus is empty");
  const ModelConfig cfg = model_config_from(a, grammar);
  fs::create_directories(a.out_dir);
  Manifest mf;
  mf.command = "train";
  mf.seed = a.seed;
  mf.config = {{"model", config_to_json_obj(cfg)},
               {"corpus", a.corpus},
               {"steps", a.steps},
               {"batch_size", a.batch_size},
               {"lr", a.lr},
               {"warmup_ratio", a.warmup_ratio},
               {"eval_every", a.eval_every},
               {"seed", a.seed}};
  std::string final_ckpt;
  if (cfg.dtype == DtypeTag::f32) {
    final_ckpt = run_train<float>(cfg, a, corpus);
  } else {
    final_ckpt = run_train<double>(cfg, a, corpus);
  }
  mf.artifacts = {final_ckpt, a.out_dir + "/train_log.csv"};
  mf.write(a.out_dir + "/manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  std::string text;
  int m = 1;
  int max_tokens = 512;
  double temperature = 0.0;  // 0 = greedy
  uint64_t seed = 0;
  bool streaming = false;
  int cs = 15;
  int ct = 5;
  bool ignore_eos = false;
  std::string out_json;
};

infer::DecodeConfig decode_config_from(const GenerateArgs& a) {
  infer::DecodeConfig cfg;
  cfg.m = a.m;
  cfg.max_speech_tokens = a.max_tokens;
  if (a.temperature > 0) {
    cfg.mode = infer::DecodeConfig::Mode::sample;
    cfg.temperature = a.temperature;
  }
  cfg.seed = a.seed;
  cfg.streaming = a.streaming;
  cfg.cs = a.cs;
  cfg.ct = a.ct;
  cfg.ignore_eos = a.ignore_eos;
  return cfg;
}

int cmd_generate(const GenerateArgs& a) {
  const auto text = parse_token_list(a.text);
  const infer::DecodeConfig cfg = decode_config_from(a);
  GenerationReport report;
  with_model(a.checkpoint, [&](auto& model) {
    using T = typename std::decay_t<decltype(model)>::scalar_type;
    infer::Engine<T> eng(model);
    if (cfg.streaming) {
      std::vector<int> all;
      report = eng.generate_streaming(
          text, cfg, eng.harness_reveal(text, cfg),
          [&](int idx, const std::vector<int>& chunk) {
            std::cout << "chunk " << idx << ":";
            for (int t : chunk) std::cout << " " << t;
            std::cout << "\n";
            all.insert(all.end(), chunk.begin(), chunk.end());
          });
      report.tokens = all;
      report.tokens_per_forward =
          report.backbone_forwards > 0
              ? static_cast<double>(all.size()) /
                    static_cast<double>(report.backbone_forwards)
              : 0.0;
    } else {
      report = eng.generate(text, cfg);
      std::cout << "tokens:";
      for (int t : report.tokens) std::cout << " " << t;
      std::cout << "\n";
    }
  });
  std::cout << report.to_json() << "\n";
  if (!a.out_json.empty()) {
    std::ofstream out(a.out_json, std::ios::binary);
    if (!out) throw IoError("cannot write " + a.out_json);
    out << report.to_json() << "\n";
    Manifest mf;
    mf.command = "generate";
    mf.seed = a.seed;
    mf.config = {{"checkpoint", a.checkpoint}, {"text", text},
                 {"m", a.m},                   {"max_tokens", a.max_tokens},
                 {"temperature", a.temperature}, {"streaming", a.streaming},
                 {"cs", a.cs},                 {"ct", a.ct},
                 {"ignore_eos", a.ignore_eos}};
    mf.artifacts = {a.out_json};
    mf.write(a.out_json + ".manifest.json");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  int m = 1;
  int64_t limit = 0;  // 0 = all
  int max_tokens = 512;
  std::string out_csv;
  std::string out_json;
};

struct EvalSummary {
  double mean_recon_error = 0.0;
  double mean_tokens_per_forward = 0.0;
  double median_wall_ms = 0.0;
  int64_t records = 0;
};

template <typename T>
EvalSummary eval_checkpoint(const DecoderModel<T>& model,
                            const synth::SynthGrammar& grammar,
                            const std::vector<synth::CorpusRecord>& records,
                            int m, int max_tokens, std::ostream* csv) {
  infer::DecodeConfig cfg;
  cfg.m = m;
  cfg.max_speech_tokens = max_tokens;
  EvalSummary summary;
  std::vector<double> walls;
  double sum_err = 0.0, sum_tpf = 0.0;
  if (csv) {
    *csv << "schema_version,record_id,recon_error,tokens,backbone_forwards,"
            "wall_ms\n";
  }
  for (const auto& rec : records) {
    infer::Engine<T> eng(model);
    const auto rep = eng.generate(rec.text, cfg);
    const auto decoded = synth::decode(grammar, rep.tokens);
    const double err = synth::reconstruction_error(rec.text, decoded);
    sum_err += err;
    sum_tpf += rep.tokens_per_forward;
    walls.push_back(rep.total_ms);
    if (csv) {
      *csv << kSchemaVersion << "," << rec.id << "," << err << ","
           << rep.tokens.size() << "," << rep.backbone_forwards << ","
           << rep.total_ms << "\n";
    }
    ++summary.records;
  }
  if (summary.records > 0) {
    summary.mean_recon_error = sum_err / static_cast<double>(summary.records);
    summary.mean_tokens_per_forward =
        sum_tpf / static_cast<double>(summary.records);
    summary.median_wall_ms = infer::median_of(walls);
  }
  return summary;
}

json summary_to_json(const EvalSummary& s) {
  return json{{"schema_version", kSchemaVersion},
              {"records", s.records},
              {"mean_recon_error", s.mean_recon_error},
              {"mean_tokens_per_forward", s.mean_tokens_per_forward},
              {"median_wall_ms", s.median_wall_ms}};
}

int cmd_eval(const EvalArgs& a) {
  synth::SynthGrammar grammar;
  auto records = synth::load_corpus(a.corpus, &grammar);
  if (a.limit > 0 && static_cast<int64_t>(records.size()) > a.limit) {
    records.resize(static_cast<size_t>(a.limit));
  }
  EvalSummary summary;
  with_model(a.checkpoint, [&](auto& model) {
    using T = typename std::decay_t<decltype(model)>::scalar_type;
    std::ofstream csv;
    std::ostream* csv_ptr = nullptr;
    if (!a.out_csv.empty()) {
      csv.open(a.out_csv, std::ios::binary);
      if (!csv) throw IoError("cannot write " + a.out_csv);
      csv_ptr = &csv;
    }
    summary = eval_checkpoint<T>(model, grammar, records, a.m, a.max_tokens,
                                 csv_ptr);
  });
  const json sj = summary_to_json(summary);
  std::cout << sj.dump() << "\n";
  if (!a.out_json.empty()) {
    std::ofstream out(a.out_json, std::ios::binary);
    if (!out) throw IoError("cannot write " + a.out_json);
    out << sj.dump(2) << "\n";
    Manifest mf;
    mf.command = "eval";
    mf.config = {{"checkpoint", a.checkpoint},
                 {"corpus", a.corpus},
                 {"m", a.m},
                 {"limit", a.limit},
                 {"max_tokens", a.max_tokens}};
    mf.artifacts = {a.out_csv, a.out_json};
    mf.write(a.out_json + ".manifest.json");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint;
  std::string corpus;
  int64_t n_tokens = 5000;
  std::string out_prefix;
};

int cmd_analyze(const AnalyzeArgs& a) {
  synth::SynthGrammar grammar;
  const auto records = synth::load_corpus(a.corpus, &grammar);
  infer::EntropyStats stats;
  with_model(a.checkpoint, [&](auto& model) {
    stats = infer::entropy_stats(model, records, a.n_tokens);
  });
  json sj{{"schema_version", kSchemaVersion},
          {"n_tokens", stats.n_tokens},
          {"mean_max_prob", stats.mean_max_prob},
          {"mean_entropy", stats.mean_entropy}};
  std::cout << sj.dump() << "\n";
  if (!a.out_prefix.empty()) {
    const std::string hist_path = a.out_prefix + "_hist.csv";
    const std::string json_path = a.out_prefix + "_summary.json";
    std::ofstream hist(hist_path, std::ios::binary);
    if (!hist) throw IoError("cannot write " + hist_path);
    hist << "schema_version,kind,bin_lo,bin_hi,count\n";
    for (size_t i = 0; i < stats.hist_max_prob.size(); ++i) {
      hist << kSchemaVersion << ",max_prob," << i * infer::kMaxProbBinWidth
           << "," << (i + 1) * infer::kMaxProbBinWidth << ","
           << stats.hist_max_prob[i] << "\n";
    }
    for (size_t i = 0; i < stats.hist_entropy.size(); ++i) {
      hist << kSchemaVersion << ",entropy," << i * infer::kEntropyBinWidth
           << "," << (i + 1) * infer::kEntropyBinWidth << ","
           << stats.hist_entropy[i] << "\n";
    }
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + json_path);
    out << sj.dump(2) << "\n";
    Manifest mf;
    mf.command = "analyze";
    mf.config = {{"checkpoint", a.checkpoint},
                 {"corpus", a.corpus},
                 {"n_tokens", a.n_tokens}};
    mf.artifacts = {hist_path, json_path};
    mf.write(a.out_prefix + "_manifest.json");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string corpus;
  std::vector<std::string> checkpoints;
  std::vector<int> m_list{1, 3, 5};
  int64_t limit = 64;
  int max_tokens = 512;
  std::string out_csv;
};

struct BenchRow {
  std::string method;
  int module_num = 0;
  double speedup_ratio = 0.0;
  double recon_error = 0.0;
  double median_wall_ms = 0.0;
  double realized_speedup_vs_ntp = 0.0;
};

int cmd_bench(const BenchArgs& a) {
  synth::SynthGrammar grammar;
  auto records = synth::load_corpus(a.corpus, &grammar);
  if (a.limit > 0 && static_cast<int64_t>(records.size()) > a.limit) {
    records.resize(static_cast<size_t>(a.limit));
  }
  // Single-threaded timing for stability.
  const int saved_cap = kernels::thread_cap();
  kernels::set_thread_cap(1);

  std::vector<BenchRow> rows;
  double ntp_wall = 0.0;
  for (const auto& path : a.checkpoints) {
    with_model(path, [&](auto& model) {
      using T = typename std::decay_t<decltype(model)>::scalar_type;
      const auto& mc = model.cfg;
      std::vector<int> ms;
      if (mc.variant == Variant::ntp) {
        ms = {1};
      } else if (mc.is_group()) {
        ms = {mc.group_size()};
      } else {
        for (int m : a.m_list)
          if (m >= 1 && m <= mc.n) ms.push_back(m);
      }
      for (int m : ms) {
        const auto summary =
            eval_checkpoint<T>(model, grammar, records, m, a.max_tokens,
                               nullptr);
        BenchRow row;
        row.method = to_string(mc.variant);
        row.module_num = mc.variant == Variant::ntp ? 0 : mc.n;
        row.speedup_ratio = summary.mean_tokens_per_forward;
        row.recon_error = summary.mean_recon_error;
        row.median_wall_ms = summary.median_wall_ms;
        if (mc.variant == Variant::ntp) ntp_wall = summary.median_wall_ms;
        rows.push_back(row);
      }
    });
  }
  kernels::set_thread_cap(saved_cap);
  if (ntp_wall > 0) {
    for (auto& row : rows) {
      row.realized_speedup_vs_ntp = ntp_wall / row.median_wall_ms;
    }
  } else {
    std::cerr << "bench: no ntp checkpoint given, realized speedup left 0\n";
  }
  std::ostringstream csv;
  csv << "schema_version,method,group_size_or_module_num,speedup_ratio,"
         "recon_error,median_wall_ms,realized_speedup_vs_ntp\n";
  for (const auto& r : rows) {
    csv << kSchemaVersion << "," << r.method << "," << r.module_num << ","
        << r.speedup_ratio << "," << r.recon_error << "," << r.median_wall_ms
        << "," << r.realized_speedup_vs_ntp << "\n";
  }
  std::cout << csv.str();
  if (!a.out_csv.empty()) {
    std::ofstream out(a.out_csv, std::ios::binary);
    if (!out) throw IoError("cannot write " + a.out_csv);
    out << csv.str();
    Manifest mf;
    mf.command = "bench";
    mf.config = {{"corpus", a.corpus},
                 {"checkpoints", a.checkpoints},
                 {"m_list", a.m_list},
                 {"limit", a.limit},
                 {"max_tokens", a.max_tokens}};
    mf.artifacts = {a.out_csv};
    mf.write(a.out_csv + ".manifest.json");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// masks print
// ---------------------------------------------------------------------------

struct MasksArgs {
  int lt = 4;
  int ls = 8;
  std::string mode = "nonstreaming";
  int cs = 15;
  int ct = 5;
  bool eq2_literal = false;
};

int cmd_masks_print(const MasksArgs& a) {
  const masks::SequenceLayout layout(a.lt, a.ls);
  masks::AttnMask mask;
  if (a.mode == "streaming") {
    mask = masks::build_streaming_mask(layout, masks::ChunkSchedule(a.cs, a.ct));
  } else if (a.mode == "nonstreaming") {
    mask = masks::build_nonstreaming_mask(
        layout, a.eq2_literal ? masks::NonstreamingSemantics::eq2_literal
                              : masks::NonstreamingSemantics::caption);
  } else {
    throw ConfigError("masks print: mode must be streaming or nonstreaming");
  }
  std::cout << masks::render(mask);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kToolVersion) +
               " - multi-token prediction speech-token laboratory"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen_data->add_option("--out", gd.out_dir, "output directory")->required();
  gen_data->add_option("--n-train", gd.n_train);
  gen_data->add_option("--n-eval", gd.n_eval);
  gen_data->add_option("--seed", gd.seed);
  gen_data->add_option("--len-range", gd.len_range, "text length lo hi")
      ->expected(2);
  gen_data->add_option("--t-symbols", gd.t_symbols);
  gen_data->add_option("--r-max", gd.r_max);
  gen_data->add_option("--p-ext", gd.p_ext);

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "train a decoder variant");
  trainc->add_option("--corpus", tr.corpus)->required();
  trainc->add_option("--out", tr.out_dir)->required();
  trainc->add_option("--variant", tr.variant,
                     "ntp|group_linear|group_trans|mtp_parallel|mtp_deepseek|"
                     "mtp_vocalnet");
  trainc->add_option("--n", tr.n, "predicted tokens per step (Module Num)");
  trainc->add_option("--g", tr.g, "group size");
  trainc->add_option("--lambda", tr.lambda, "per-depth loss decay factor");
  trainc->add_option("--steps", tr.steps);
  trainc->add_option("--batch-size", tr.batch_size);
  trainc->add_option("--lr", tr.lr);
  trainc->add_option("--warmup-ratio", tr.warmup_ratio);
  trainc->add_option("--seed", tr.seed);
  trainc->add_option("--eval-every", tr.eval_every);
  trainc->add_option("--d-model", tr.d_model);
  trainc->add_option("--n-heads", tr.n_heads);
  trainc->add_option("--d-ff", tr.d_ff);
  trainc->add_option("--backbone-layers", tr.backbone_layers);
  trainc->add_option("--projector-layers", tr.projector_layers);
  trainc->add_option("--cs", tr.cs, "speech chunk length C_s");
  trainc->add_option("--ct", tr.ct, "text positions revealed per chunk C_t");
  trainc->add_option("--mask-mix", tr.mask_mix,
                     "probability of the streaming mask per training sample");
  trainc->add_option("--dtype", tr.dtype, "f32|f64");
  trainc->add_option("--pos-encoding", tr.pos_encoding, "rotary|sinusoidal");

  GenerateArgs ge;
  auto* gen = app.add_subcommand("generate", "generate speech tokens");
  gen->add_option("--checkpoint", ge.checkpoint)->required();
  gen->add_option("--text", ge.text, "space-separated text symbol ids")
      ->required();
  gen->add_option("--m", ge.m, "tokens accepted per backbone step");
  gen->add_option("--max-tokens", ge.max_tokens);
  gen->add_option("--temperature", ge.temperature, "0 = greedy");
  gen->add_option("--seed", ge.seed);
  gen->add_flag("--streaming", ge.streaming);
  gen->add_option("--cs", ge.cs);
  gen->add_option("--ct", ge.ct);
  gen->add_flag("--ignore-eos", ge.ignore_eos);
  gen->add_option("--out", ge.out_json, "write the report JSON here");

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "reconstruction-error evaluation");
  evalc->add_option("--checkpoint", ev.checkpoint)->required();
  evalc->add_option("--corpus", ev.corpus)->required();
  evalc->add_option("--m", ev.m);
  evalc->add_option("--limit", ev.limit, "evaluate at most this many records");
  evalc->add_option("--max-tokens", ev.max_tokens);
  evalc->add_option("--out-csv", ev.out_csv);
  evalc->add_option("--out-json", ev.out_json);

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand(
      "analyze", "teacher-forced entropy / max-probability statistics");
  analyze->add_option("--checkpoint", an.checkpoint)->required();
  analyze->add_option("--corpus", an.corpus)->required();
  analyze->add_option("--n-tokens", an.n_tokens);
  analyze->add_option("--out", an.out_prefix, "output path prefix");

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "variant comparison table");
  bench->add_option("--corpus", be.corpus)->required();
  bench->add_option("--checkpoints", be.checkpoints)->required();
  bench->add_option("--m-list", be.m_list);
  bench->add_option("--limit", be.limit);
  bench->add_option("--max-tokens", be.max_tokens);
  bench->add_option("--out", be.out_csv);

  MasksArgs ma;
  auto* masks_cmd = app.add_subcommand("masks", "mask utilities");
  masks_cmd->require_subcommand(1);
  auto* masks_print =
      masks_cmd->add_subcommand("print", "render a mask as a 0/1 grid");
  masks_print->add_option("--lt", ma.lt, "text positions incl. BOS");
  masks_print->add_option("--ls", ma.ls, "speech positions incl. SOS");
  masks_print->add_option("--mode", ma.mode, "streaming|nonstreaming");
  masks_print->add_option("--cs", ma.cs);
  masks_print->add_option("--ct", ma.ct);
  masks_print->add_flag("--eq2-literal", ma.eq2_literal,
                        "text rows see every column (printed-equation form)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen_data) return cmd_gen_data(gd);
    if (*trainc) return cmd_train(tr);
    if (*gen) return cmd_generate(ge);
    if (*evalc) return cmd_eval(ev);
    if (*analyze) return cmd_analyze(an);
    if (*bench) return cmd_bench(be);
    if (*masks_print) return cmd_masks_print(ma);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "file format error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
