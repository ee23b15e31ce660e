#include "fpalign/cli.hpp"

#include <fmt/core.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "fpalign/augmentation.hpp"
#include "fpalign/embedding.hpp"
#include "fpalign/error.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/peak_fingerprint.hpp"
#include "fpalign/segment_alignment.hpp"
#include "fpalign/track_retrieval.hpp"
#include "fpalign/vector_index.hpp"
#include "json.hpp"

namespace fpalign::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  ConfigError(std::string flag_name, const std::string& message)
      : std::runtime_error(message), flag(std::move(flag_name)) {}
  std::string flag;
};

std::string flag_of(const std::string& key) { return "--" + key; }

std::string config_key(std::string key) {
  for (auto& c : key) {
    if (c == '-') c = '_';
  }
  return key;
}

// Flag values win over the config file; a command section ("align": {...})
// wins over top-level keys.
class Settings {
 public:
  Settings(const std::optional<std::string>& config_path, const std::string& section) {
    if (!config_path) return;
    path_ = *config_path;
    std::ifstream in(path_);
    if (!in) throw ConfigError("--config", fmt::format("cannot open config file {}", path_.string()));
    json root;
    try {
      in >> root;
    } catch (const json::exception& e) {
      throw ConfigError("--config", fmt::format("{}: {}", path_.string(), e.what()));
    }
    if (!root.is_object()) throw ConfigError("--config", fmt::format("{}: expected a JSON object", path_.string()));
    if (root.contains(section)) {
      if (!root[section].is_object()) {
        throw ConfigError("--config", fmt::format("{}: \"{}\" must be an object", path_.string(), section));
      }
      layers_.push_back(root[section]);
    }
    layers_.push_back(std::move(root));
  }

  template <class T>
  std::optional<T> find(const std::optional<T>& flag, const std::string& key) const {
    if (flag) return flag;
    const auto name = config_key(key);
    for (const auto& layer : layers_) {
      if (!layer.contains(name)) continue;
      try {
        return layer.at(name).get<T>();
      } catch (const json::exception&) {
        throw ConfigError(flag_of(key), fmt::format("config key \"{}\" has the wrong type", name));
      }
    }
    return std::nullopt;
  }

  template <class T>
  T get(const std::optional<T>& flag, const std::string& key, T fallback) const {
    auto v = find(flag, key);
    return v ? *v : fallback;
  }

  // Config-file paths are relative to the config file.
  std::optional<fs::path> path(const std::optional<std::string>& flag, const std::string& key) const {
    if (flag) return fs::path(*flag);
    auto v = find<std::string>(std::nullopt, key);
    if (!v) return std::nullopt;
    fs::path p(*v);
    return p.is_relative() ? path_.parent_path() / p : p;
  }

  fs::path required_path(const std::optional<std::string>& flag, const std::string& key) const {
    auto p = path(flag, key);
    if (!p) throw ConfigError(flag_of(key), fmt::format("{} is required", flag_of(key)));
    return *p;
  }

 private:
  fs::path path_;
  std::vector<json> layers_;
};

fs::path existing_file(const fs::path& p, const std::string& key) {
  if (!fs::is_regular_file(p)) {
    throw ConfigError(flag_of(key), fmt::format("{}: file not found: {}", flag_of(key), p.string()));
  }
  return p;
}

fs::path existing_dir(const fs::path& p, const std::string& key) {
  if (!fs::is_directory(p)) {
    throw ConfigError(flag_of(key), fmt::format("{}: directory not found: {}", flag_of(key), p.string()));
  }
  return p;
}

fs::path existing_path(const fs::path& p, const std::string& key) {
  if (!fs::exists(p)) {
    throw ConfigError(flag_of(key), fmt::format("{}: path not found: {}", flag_of(key), p.string()));
  }
  return p;
}

std::string choice(const std::string& value, const std::string& key, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return value;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
  throw ConfigError(flag_of(key), fmt::format("{} must be one of {}, got \"{}\"", flag_of(key), list, value));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", tmp.string()));
    out << text;
    if (!out) throw Error(ErrorKind::Io, fmt::format("write failed for {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

void emit_report(const ordered_json& report, const std::optional<fs::path>& path) {
  const auto text = report.dump(2) + "\n";
  if (path) {
    write_text(*path, text);
  } else {
    std::cout << text;
  }
}

bool has_magic(const fs::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  std::string head(magic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  return in && head == magic;
}

std::optional<ProjectionWeights> load_weights(const std::optional<fs::path>& path) {
  if (!path) return std::nullopt;
  return read_weights(*path);
}

std::vector<fs::path> embedding_inputs(const fs::path& p) {
  if (fs::is_directory(p)) return list_files(p, ".afpe");
  return {p};
}

// Options shared by every subcommand.
struct Common {
  std::optional<std::string> config;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  std::optional<bool> strict;
  std::optional<std::string> log_level;
};

void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--config", c.config, "JSON config file; flags override its values");
  cmd.add_option("--threads", c.threads, "Worker threads (0 = all cores; default FPALIGN_THREADS)");
  cmd.add_option("--seed", c.seed, "Global random seed");
  cmd.add_flag("--strict{true},--lenient{false}", c.strict,
               "Fail on unreadable inputs instead of skipping them");
  cmd.add_option("--log-level", c.log_level, "trace|debug|info|warn|error|off");
}

void apply_common(const Common& c, const Settings& s) {
  const auto level = s.get<std::string>(c.log_level, "log-level", "warn");
  spdlog::set_level(spdlog::level::from_str(level));

  std::optional<std::size_t> threads = c.threads;
  if (!threads) {
    if (const char* env = std::getenv("FPALIGN_THREADS"); env != nullptr && *env != '\0') {
      try {
        threads = static_cast<std::size_t>(std::stoul(env));
      } catch (const std::exception&) {
        throw ConfigError("--threads", fmt::format("FPALIGN_THREADS=\"{}\" is not a number", env));
      }
    }
  }
  set_thread_count(s.get<std::size_t>(threads, "threads", 0));
}

// ---- augment ---------------------------------------------------------------

struct AugmentArgs {
  Common common;
  std::optional<std::string> refs, conditions, out, mode, encoding;
  std::optional<std::size_t> n_per_condition, max_snippets;
  std::optional<double> segment_seconds, crossfade;
};

int cmd_augment(const AugmentArgs& a) {
  const Settings s(a.common.config, "augment");
  apply_common(a.common, s);
  const auto refs = existing_dir(s.required_path(a.refs, "refs"), "refs");
  const auto conditions_path = existing_file(s.required_path(a.conditions, "conditions"), "conditions");
  const auto out = s.required_path(a.out, "out");

  QuerySetOptions opt;
  const auto mode = choice(s.get<std::string>(a.mode, "mode", "track"), "mode", {"track", "segment"});
  opt.mode = mode == "track" ? QuerySetMode::Track : QuerySetMode::Segment;
  opt.n_per_condition = s.get(a.n_per_condition, "n-per-condition", opt.n_per_condition);
  opt.segment_seconds = s.get(a.segment_seconds, "segment-seconds", opt.segment_seconds);
  opt.max_snippets = s.get(a.max_snippets, "max-snippets", opt.max_snippets);
  opt.crossfade_seconds = s.get(a.crossfade, "crossfade", opt.crossfade_seconds);
  opt.seed = s.get<std::uint64_t>(a.common.seed, "seed", 0);
  const auto enc = choice(s.get<std::string>(a.encoding, "encoding", "float32"), "encoding", {"float32", "pcm16"});
  opt.encoding = enc == "pcm16" ? WavEncoding::Pcm16 : WavEncoding::Float32;

  std::vector<AugmentationSpec> specs;
  try {
    specs = read_condition_file(conditions_path);
  } catch (const Error& e) {
    throw ConfigError("--conditions", e.what());
  }
  const auto result = make_query_set(refs, specs, opt, out);

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "augment";
  report["mode"] = mode;
  report["seed"] = opt.seed;
  report["segment_seconds"] = opt.segment_seconds;
  report["query_count"] = result.queries.size();
  report["manifest"] = result.manifest.lexically_relative(out).generic_string();
  if (!result.ground_truth.empty()) {
    report["ground_truth"] = result.ground_truth.lexically_relative(out).generic_string();
  }
  auto conds = ordered_json::array();
  for (const auto& spec : specs) conds.push_back(ordered_json::parse(json(spec).dump()));
  report["conditions"] = conds;
  report["warnings"] = result.warnings;
  emit_report(report, out / "augment_report.json");
  return kOk;
}

// ---- build-index -------------------------------------------------------------

struct BuildArgs {
  Common common;
  std::optional<std::string> refs, out, mode, index_type, weights, report;
  std::optional<std::uint32_t> n_lists, n_probe, kmeans_iters;
};

int cmd_build_index(const BuildArgs& a) {
  const Settings s(a.common.config, "build-index");
  apply_common(a.common, s);
  const auto refs = existing_dir(s.required_path(a.refs, "refs"), "refs");
  const auto out = s.required_path(a.out, "out");
  const auto mode = choice(s.get<std::string>(a.mode, "mode", "embeddings"), "mode", {"embeddings", "peaks"});
  const bool strict = s.get<bool>(a.common.strict, "strict", false);
  const auto report_path = s.path(a.report, "report");

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "build-index";
  report["mode"] = mode;
  auto skipped = ordered_json::array();

  if (mode == "peaks") {
    PeakConfig config;
    std::vector<PeakTrack> tracks;
    for (const auto& p : list_files(refs, ".wav")) {
      try {
        auto audio = read_wav(p);
        if (audio.sample_rate != config.sample_rate) audio = resample(audio, config.sample_rate);
        tracks.push_back({p.stem().string(), std::move(audio)});
      } catch (const Error& e) {
        if (strict) throw;
        spdlog::warn("skipping {}: {}", p.string(), e.what());
        skipped.push_back(p.filename().string());
      }
    }
    if (tracks.empty()) throw Error(ErrorKind::Data, fmt::format("no readable WAV files in {}", refs.string()));
    const auto db = build_peak_db(tracks, config);
    db.save(out);
    report["tracks"] = db.tracks().size();
    report["landmarks"] = db.size();
    report["sample_rate"] = config.sample_rate;
    report["n_fft"] = config.n_fft;
    report["hop"] = config.hop;
  } else {
    const auto type = choice(s.get<std::string>(a.index_type, "index-type", "exact"), "index-type", {"exact", "ivf"});
    const auto weights_path = s.path(a.weights, "weights");
    if (weights_path) existing_file(*weights_path, "weights");
    const auto weights = load_weights(weights_path);
    const auto policy = strict ? DegeneratePolicy::Throw : DegeneratePolicy::Skip;

    std::vector<Fingerprint> fps;
    std::size_t tracks = 0;
    for (const auto& p : list_files(refs, ".afpe")) {
      try {
        auto f = fingerprint_frames(read_embeddings(p), weights ? &*weights : nullptr, policy);
        fps.insert(fps.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
        ++tracks;
      } catch (const Error& e) {
        if (strict) throw;
        spdlog::warn("skipping {}: {}", p.string(), e.what());
        skipped.push_back(p.filename().string());
      }
    }
    if (fps.empty()) throw Error(ErrorKind::Data, fmt::format("no usable .afpe files in {}", refs.string()));

    report["index_type"] = type;
    if (type == "ivf") {
      IvfParams params;
      params.n_lists = s.get(a.n_lists, "n-lists", params.n_lists);
      params.n_probe = s.get(a.n_probe, "n-probe", params.n_probe);
      params.kmeans_iters = s.get(a.kmeans_iters, "kmeans-iters", params.kmeans_iters);
      params.seed = s.get<std::uint64_t>(a.common.seed, "seed", 0);
      try {
        build_ivf(fps, params).save(out);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Parameter) throw ConfigError("--n-lists", e.what());
        throw;
      }
      report["n_lists"] = params.n_lists;
      report["n_probe"] = params.n_probe;
      report["seed"] = params.seed;
    } else {
      build_exact(fps).save(out);
    }
    report["tracks"] = tracks;
    report["vectors"] = fps.size();
    report["dim"] = fps.front().vector.size();
    report["projection"] = weights ? "weights" : "identity";
  }
  report["skipped"] = skipped;
  emit_report(report, report_path);
  return kOk;
}

// ---- identify ----------------------------------------------------------------

struct IdentifyArgs {
  Common common;
  std::optional<std::string> index, manifest, report, weights, aggregation, query_embeddings;
  std::optional<std::size_t> k;
};

fs::path query_embedding_path(const fs::path& query, const std::optional<fs::path>& dir) {
  if (query.extension() == ".afpe") return query;
  if (dir) return *dir / (query.stem().string() + ".afpe");
  auto p = query;
  return p.replace_extension(".afpe");
}

TrackQueryResult identify_peaks(const PeakDB& db, const ManifestRow& row) {
  auto audio = read_wav(row.query_path);
  if (audio.sample_rate != db.config().sample_rate) audio = resample(audio, db.config().sample_rate);
  TrackQueryResult r;
  r.query_id = row.query_path.string();
  for (const auto& m : match_peaks(db, audio.samples, audio.sample_rate)) {
    r.ranked.push_back({m.track_id, static_cast<double>(m.vote_count)});
  }
  return r;
}

int cmd_identify(const IdentifyArgs& a) {
  const Settings s(a.common.config, "identify");
  apply_common(a.common, s);
  const auto index_path = existing_file(s.required_path(a.index, "index"), "index");
  const auto manifest = existing_file(s.required_path(a.manifest, "manifest"), "manifest");
  const auto report_path = s.path(a.report, "report");
  const bool strict = s.get<bool>(a.common.strict, "strict", false);
  const auto k = s.get<std::size_t>(a.k, "k", 5);
  if (k == 0) throw ConfigError("--k", "--k must be >= 1");
  const auto agg = choice(s.get<std::string>(a.aggregation, "aggregation", "sum"), "aggregation", {"sum", "vote"});
  const auto emb_dir = s.path(a.query_embeddings, "query-embeddings");
  if (emb_dir) existing_dir(*emb_dir, "query-embeddings");
  const auto weights_path = s.path(a.weights, "weights");
  if (weights_path) existing_file(*weights_path, "weights");

  const auto rows = read_track_manifest(manifest);
  HitRateReport hits;
  std::string mode;
  if (has_magic(index_path, "AFPH")) {
    mode = "peaks";
    const auto db = PeakDB::load(index_path);
    hits = evaluate_track_queries(rows, [&](const ManifestRow& row) { return identify_peaks(db, row); }, strict);
  } else {
    mode = "embeddings";
    const auto index = load_index(index_path);
    const auto weights = load_weights(weights_path);
    const auto policy = strict ? DegeneratePolicy::Throw : DegeneratePolicy::Skip;
    const auto rule = agg == "sum" ? Aggregation::SimilaritySum : Aggregation::MajorityVote;
    hits = evaluate_track_queries(
        rows,
        [&](const ManifestRow& row) {
          const auto m = read_embeddings(query_embedding_path(row.query_path, emb_dir));
          const auto fps = fingerprint_frames(m, weights ? &*weights : nullptr, policy);
          return identify(fps, *index, k, rule, row.query_path.string());
        },
        strict);
  }

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "identify";
  report["mode"] = mode;
  if (mode == "embeddings") {
    report["k"] = k;
    report["aggregation"] = agg;
  }
  const auto hit_json = hits.to_json();
  for (const auto& [key, value] : hit_json.items()) {
    if (key != "schema_version") report[key] = value;
  }
  emit_report(report, report_path);
  return kOk;
}

// ---- align -------------------------------------------------------------------

struct AlignArgs {
  Common common;
  std::optional<std::string> index, queries, weights, out, report;
  std::optional<std::size_t> k, n_seeds, min_inliers;
  std::optional<double> sim_threshold, inlier_tolerance, a_min, a_max, segment_length, huber_delta;
};

int cmd_align(const AlignArgs& a) {
  const Settings s(a.common.config, "align");
  apply_common(a.common, s);
  const auto index_path = existing_file(s.required_path(a.index, "index"), "index");
  const auto queries = existing_path(s.required_path(a.queries, "queries"), "queries");
  const auto out = s.required_path(a.out, "out");
  const auto report_path = s.path(a.report, "report");
  const auto weights_path = s.path(a.weights, "weights");
  if (weights_path) existing_file(*weights_path, "weights");
  const bool strict = s.get<bool>(a.common.strict, "strict", false);
  const auto seed = s.get<std::uint64_t>(a.common.seed, "seed", 0);

  AlignParams p;
  p.k = s.get(a.k, "k", p.k);
  p.sim_threshold = s.get(a.sim_threshold, "sim-threshold", p.sim_threshold);
  p.inlier_tolerance = s.get(a.inlier_tolerance, "inlier-tolerance", p.inlier_tolerance);
  p.n_seeds = s.get(a.n_seeds, "n-seeds", p.n_seeds);
  p.min_inliers = s.get(a.min_inliers, "min-inliers", p.min_inliers);
  p.a_min = s.get(a.a_min, "a-min", p.a_min);
  p.a_max = s.get(a.a_max, "a-max", p.a_max);
  p.segment_length = s.get(a.segment_length, "segment-length", p.segment_length);
  if (auto d = s.find(a.huber_delta, "huber-delta")) p.huber = HuberScale::fixed(*d);
  try {
    p.validate();
  } catch (const Error& e) {
    throw ConfigError("--sim-threshold", e.what());
  }

  if (has_magic(index_path, "AFPH")) {
    throw ConfigError("--index", "--index: align needs an embedding index (.afpi), got a peak database");
  }
  const auto index = load_index(index_path);
  const auto weights = load_weights(weights_path);
  const auto policy = strict ? DegeneratePolicy::Throw : DegeneratePolicy::Skip;

  std::vector<std::string> errors;
  std::vector<QueryFingerprints> qfps;
  for (const auto& path : embedding_inputs(queries)) {
    try {
      const auto m = read_embeddings(path);
      qfps.push_back({path.stem().string(), fingerprint_frames(m, weights ? &*weights : nullptr, policy),
                      static_cast<double>(m.window_seconds)});
    } catch (const Error& e) {
      if (strict) throw;
      spdlog::warn("skipping query {}: {}", path.string(), e.what());
      errors.push_back(fmt::format("{}: {}", path.filename().string(), e.what()));
    }
  }
  const auto segments = align(qfps, *index, p, seed, strict ? nullptr : &errors);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_predictions_csv(segments, out);

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "align";
  report["seed"] = seed;
  report["queries"] = qfps.size();
  report["segments"] = segments.size();
  report["predictions"] = out.filename().string();
  report["errors"] = errors;
  emit_report(report, report_path);
  return kOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::optional<std::string> predictions, ground_truth, report;
  std::optional<double> iou_threshold;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const Settings s(a.common.config, "evaluate");
  apply_common(a.common, s);
  const auto preds = existing_file(s.required_path(a.predictions, "predictions"), "predictions");
  const auto gt = existing_file(s.required_path(a.ground_truth, "ground-truth"), "ground-truth");
  const auto report_path = s.path(a.report, "report");
  const auto iou = s.get(a.iou_threshold, "iou-threshold", 0.3);
  if (!(iou > 0.0 && iou <= 1.0)) throw ConfigError("--iou-threshold", "--iou-threshold must be in (0, 1]");
  emit_report(evaluate_run(preds, gt, iou).to_json(), report_path);
  return kOk;
}

// ---- peaks -------------------------------------------------------------------

struct PeaksArgs {
  Common common;
  std::optional<std::string> index, manifest, report;
  std::vector<std::string> query;
  std::optional<std::size_t> top;
};

int cmd_peaks(const PeaksArgs& a) {
  const Settings s(a.common.config, "peaks");
  apply_common(a.common, s);
  const auto index_path = existing_file(s.required_path(a.index, "index"), "index");
  if (!has_magic(index_path, "AFPH")) throw ConfigError("--index", "--index must be a peak database (.afph)");
  const auto manifest = s.path(a.manifest, "manifest");
  if (manifest) existing_file(*manifest, "manifest");
  std::vector<ManifestRow> rows;
  for (const auto& q : a.query) rows.push_back({existing_file(q, "query"), "", ""});
  if (manifest) {
    for (auto& r : read_track_manifest(*manifest)) rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ConfigError("--query", "give --query files or a --manifest");
  const auto report_path = s.path(a.report, "report");
  const auto top = s.get<std::size_t>(a.top, "top", 5);
  const bool strict = s.get<bool>(a.common.strict, "strict", false);

  const auto db = PeakDB::load(index_path);
  std::vector<ordered_json> per_query(rows.size());
  std::vector<std::string> errors(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    try {
      auto audio = read_wav(rows[i].query_path);
      if (audio.sample_rate != db.config().sample_rate) audio = resample(audio, db.config().sample_rate);
      const auto matches = match_peaks(db, audio.samples, audio.sample_rate);
      auto list = ordered_json::array();
      for (std::size_t m = 0; m < matches.size() && m < top; ++m) {
        list.push_back({{"track_id", matches[m].track_id},
                        {"offset_seconds", std::round(matches[m].offset_seconds * 1000.0) / 1000.0},
                        {"offset_frames", matches[m].offset_frames},
                        {"votes", matches[m].vote_count}});
      }
      per_query[i] = {{"query", rows[i].query_path.filename().string()}, {"matches", list}};
      if (!rows[i].truth_track_id.empty()) {
        per_query[i]["truth_track_id"] = rows[i].truth_track_id;
        per_query[i]["hit"] = !matches.empty() && matches.front().track_id == rows[i].truth_track_id;
      }
    } catch (const Error& e) {
      errors[i] = fmt::format("{}: {}", rows[i].query_path.filename().string(), e.what());
    }
  });

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["command"] = "peaks";
  report["sample_rate"] = db.config().sample_rate;
  report["hop_seconds"] = db.config().hop_seconds();
  auto queries = ordered_json::array();
  auto errs = ordered_json::array();
  std::size_t judged = 0, hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!errors[i].empty()) {
      if (strict) throw Error(ErrorKind::Data, errors[i]);
      errs.push_back(errors[i]);
      continue;
    }
    if (per_query[i].contains("hit")) {
      ++judged;
      hits += per_query[i]["hit"].get<bool>() ? 1 : 0;
    }
    queries.push_back(std::move(per_query[i]));
  }
  if (judged > 0) report["top1_hit_rate"] = round2(100.0 * static_cast<double>(hits) / static_cast<double>(judged));
  report["queries"] = queries;
  report["errors"] = errs;
  emit_report(report, report_path);
  return kOk;
}

// ---- error reporting ---------------------------------------------------------

int fail(int code, const std::string& kind, const std::string& message, const std::string& flag = {}) {
  ordered_json e;
  e["exit_code"] = code;
  e["kind"] = kind;
  e["message"] = message;
  if (!flag.empty()) e["flag"] = flag;
  std::cerr << ordered_json{{"error", e}}.dump() << std::endl;
  return code;
}

void init_logging() {
  static const bool once = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("fpalign"));
    return true;
  }();
  (void)once;
}

}  // namespace

int run(int argc, const char* const* argv) {
  init_logging();
  CLI::App app{"Audio fingerprint matching and temporal alignment", "fpalign"};
  app.require_subcommand(1);

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Build a distorted query set from reference WAVs");
  add_common(*c_aug, aug.common);
  c_aug->add_option("--refs", aug.refs, "Directory of reference WAV files");
  c_aug->add_option("--conditions", aug.conditions, "JSON list of augmentation conditions");
  c_aug->add_option("--out", aug.out, "Output directory");
  c_aug->add_option("--mode", aug.mode, "track|segment");
  c_aug->add_option("--n-per-condition", aug.n_per_condition, "Queries per condition");
  c_aug->add_option("--segment-seconds", aug.segment_seconds, "Excerpt length in seconds");
  c_aug->add_option("--max-snippets", aug.max_snippets, "Segment mode: max excerpts per query");
  c_aug->add_option("--crossfade", aug.crossfade, "Segment mode: crossfade seconds");
  c_aug->add_option("--encoding", aug.encoding, "float32|pcm16");

  BuildArgs build;
  auto* c_build = app.add_subcommand("build-index", "Index reference embeddings or peak landmarks");
  add_common(*c_build, build.common);
  c_build->add_option("--refs", build.refs, "Directory of .afpe files (embeddings) or WAV files (peaks)");
  c_build->add_option("--out", build.out, "Output .afpi or .afph file");
  c_build->add_option("--mode", build.mode, "embeddings|peaks");
  c_build->add_option("--index-type", build.index_type, "exact|ivf");
  c_build->add_option("--weights", build.weights, "Projection head (.afpw); omit to L2-normalize raw frames");
  c_build->add_option("--n-lists", build.n_lists, "IVF partitions");
  c_build->add_option("--n-probe", build.n_probe, "IVF partitions probed per query");
  c_build->add_option("--kmeans-iters", build.kmeans_iters, "IVF k-means iterations");
  c_build->add_option("--report", build.report, "Write the build summary JSON here instead of stdout");

  IdentifyArgs ident;
  auto* c_ident = app.add_subcommand("identify", "Track identification hit rates for a query manifest");
  add_common(*c_ident, ident.common);
  c_ident->add_option("--index", ident.index, ".afpi or .afph index");
  c_ident->add_option("--manifest", ident.manifest, "CSV: query_path,truth_track_id,condition");
  c_ident->add_option("--report", ident.report, "Output report JSON (default stdout)");
  c_ident->add_option("--weights", ident.weights, "Projection head (.afpw)");
  c_ident->add_option("--k", ident.k, "Neighbors per query frame");
  c_ident->add_option("--aggregation", ident.aggregation, "sum|vote");
  c_ident->add_option("--query-embeddings", ident.query_embeddings,
                      "Directory of <query stem>.afpe files for WAV manifest entries");

  AlignArgs al;
  auto* c_align = app.add_subcommand("align", "Detect and align matching segments");
  add_common(*c_align, al.common);
  c_align->add_option("--index", al.index, "Embedding index (.afpi)");
  c_align->add_option("--queries", al.queries, "Query .afpe file or directory");
  c_align->add_option("--weights", al.weights, "Projection head (.afpw)");
  c_align->add_option("--out", al.out, "Predictions CSV");
  c_align->add_option("--report", al.report, "Summary JSON (default stdout)");
  c_align->add_option("--k", al.k, "Neighbors per query frame");
  c_align->add_option("--sim-threshold", al.sim_threshold, "Minimum cosine similarity of a match");
  c_align->add_option("--inlier-tolerance", al.inlier_tolerance, "Inlier residual bound, seconds");
  c_align->add_option("--n-seeds", al.n_seeds, "Candidate trajectories per (query, reference) pair");
  c_align->add_option("--min-inliers", al.min_inliers, "Minimum inliers of a trajectory");
  c_align->add_option("--a-min", al.a_min, "Lower bound on the time-scaling factor");
  c_align->add_option("--a-max", al.a_max, "Upper bound on the time-scaling factor");
  c_align->add_option("--segment-length", al.segment_length, "Seconds added to the last inlier (default window)");
  c_align->add_option("--huber-delta", al.huber_delta, "Fixed Huber threshold (default adaptive)");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Track, BBox and Length F1 of predictions");
  add_common(*c_eval, ev.common);
  c_eval->add_option("--predictions", ev.predictions, "Predictions CSV");
  c_eval->add_option("--ground-truth", ev.ground_truth, "Ground-truth CSV");
  c_eval->add_option("--iou-threshold", ev.iou_threshold, "BBox IoU threshold");
  c_eval->add_option("--report", ev.report, "Output report JSON (default stdout)");

  PeaksArgs pk;
  auto* c_peaks = app.add_subcommand("peaks", "Match WAV queries against a peak landmark database");
  add_common(*c_peaks, pk.common);
  c_peaks->add_option("--index", pk.index, "Peak database (.afph)");
  c_peaks->add_option("--query", pk.query, "Query WAV file (repeatable)");
  c_peaks->add_option("--manifest", pk.manifest, "CSV: query_path,truth_track_id,condition");
  c_peaks->add_option("--top", pk.top, "Matches reported per query");
  c_peaks->add_option("--report", pk.report, "Output report JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfigError, "config", e.what());
  }

  try {
    if (c_aug->parsed()) return cmd_augment(aug);
    if (c_build->parsed()) return cmd_build_index(build);
    if (c_ident->parsed()) return cmd_identify(ident);
    if (c_align->parsed()) return cmd_align(al);
    if (c_eval->parsed()) return cmd_evaluate(ev);
    if (c_peaks->parsed()) return cmd_peaks(pk);
    return fail(kConfigError, "config", "no subcommand");
  } catch (const ConfigError& e) {
    return fail(kConfigError, "config", e.what(), e.flag);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Parameter) return fail(kConfigError, "config", e.what());
    return fail(kDataError, to_string(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kDataError, "io", e.what());
  } catch (const std::exception& e) {
    return fail(kInternalError, "internal", e.what());
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("fpalign");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fpalign::cli
