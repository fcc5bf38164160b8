#include "fanranker/cli.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fanranker/cohort.hpp"
#include "fanranker/evaluation.hpp"
#include "fanranker/models.hpp"
#include "fanranker/server.hpp"
#include "fanranker/service.hpp"
#include "fanranker/synth.hpp"

namespace fanranker {

using nlohmann::ordered_json;

void Pipeline::save_caches() const {
  if (!options.embeddingCache.empty()) embeddings->save(options.embeddingCache);
  if (!options.moderationCache.empty()) moderation->save(options.moderationCache);
}

Pipeline make_pipeline(const LogStore& store, const PipelineOptions& options) {
  Pipeline p;
  p.options = options;
  p.embeddings = std::make_shared<CachingEmbeddingProvider>(std::make_shared<HashedNgramProvider>(options.embeddingDim));
  if (!options.embeddingCache.empty() && std::filesystem::exists(options.embeddingCache)) {
    p.embeddings->load(options.embeddingCache);
  }
  std::shared_ptr<const ModerationProvider> inner;
  if (!options.moderationUrl.empty()) {
    HttpModerationConfig cfg;
    cfg.endpoint = options.moderationUrl;
    inner = std::make_shared<HttpModerationProvider>(cfg);
  } else if (!options.lexicon.empty()) {
    inner = std::make_shared<LexiconModerationProvider>(LexiconModerationProvider::load(options.lexicon));
  } else {
    inner = std::make_shared<LexiconModerationProvider>(LexiconModerationProvider::defaults());
  }
  p.moderation = std::make_shared<CachingModerationProvider>(inner);
  if (!options.moderationCache.empty() && std::filesystem::exists(options.moderationCache)) {
    p.moderation->load(options.moderationCache);
  }
  p.chatsim = std::make_shared<ChatSimEngine>(store, p.embeddings);
  p.labels = std::make_shared<ChatLabels>(store, p.moderation);
  if (!options.moderationUrl.empty()) p.labels->prefetch_all();
  p.extractor = std::make_shared<FeatureExtractor>(store, p.chatsim, p.labels, options.metrics);
  return p;
}

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

std::vector<CohortRecord> load_cohort(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_cohort_csv(in);
}

LabeledMatrix load_matrix(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_matrix_csv(in);
}

void add_pipeline_options(CLI::App* cmd, PipelineOptions& o) {
  cmd->add_option("--embedding-dim", o.embeddingDim, "Hashed n-gram embedding dimension")->check(CLI::PositiveNumber);
  cmd->add_option("--embedding-cache", o.embeddingCache, "Embedding cache file");
  cmd->add_option("--lexicon", o.lexicon, "Toxicity lexicon JSON")->check(CLI::ExistingFile);
  cmd->add_option("--moderation-url", o.moderationUrl, "OpenAI-compatible moderation endpoint");
  cmd->add_option("--moderation-cache", o.moderationCache, "Moderation cache JSONL");
  cmd->add_option("--on-time-seconds", o.metrics.onTimeSeconds, "On-time threshold after session start");
  cmd->add_option("--tz-offset", o.metrics.tzOffsetSeconds, "Seconds added before day bucketing");
}

ModelKind kind_from(const std::string& name) {
  auto k = parse_model_kind(name);
  if (!k) throw CLI::ValidationError("--model", "unknown model kind '" + name + "'");
  return *k;
}

std::unique_ptr<RankingModel> train_model(ModelKind kind, const LabeledMatrix& m, const std::string& cv,
                                          std::uint64_t seed, const std::filesystem::path& params_path,
                                          const std::filesystem::path& cv_report, std::ostream& out) {
  Hyperparameters params;
  if (!params_path.empty()) params = parse_hyperparameters_json(read_file(params_path));
  validate(kind, params);
  if (cv != "none") {
    std::vector<Hyperparameters> grid = cv == "grid" ? default_grid(kind) : std::vector<Hyperparameters>{params};
    const CvReport report = cross_validate(kind, m, grid, seed);
    params = report.chosen_params();
    out << "cv: " << grid.size() << " grid point(s), chosen mean log-loss "
        << report.grid[report.chosen].meanLogLoss << '\n';
    if (!cv_report.empty()) write_file(cv_report, report.to_json());
  }
  auto model = make_model(kind, params);
  model->fit(m, seed);
  return model;
}

void write_predictions(const std::filesystem::path& path, const RankingModel& model, const LabeledMatrix& m) {
  auto out = open_out(path);
  out << "viewerId,vtuberId,liveId,anchorTs,label,score\n";
  const auto scores = model.predict(m);
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto& r = m.records[i];
    std::snprintf(buf, sizeof buf, "%.17g", scores[i]);
    out << r.viewerId.value << ',' << r.vtuberId.value << ',' << r.anchorSession << ',' << r.anchorTs << ','
        << int(m.labels[i]) << ',' << buf << '\n';
  }
}

struct CommonArgs {
  std::string store, cohort, matrix, modelPath, out, report, session, config, truth;
  std::string sessionsFile, eventsFile, codemap;
  std::string kind = "hgb";
  std::string cv = "none";
  std::string cvReport, params, predictions, baseline, renewals;
  std::uint64_t seed = 7;
  std::optional<std::uint64_t> seedOverride;
  std::optional<EpochSeconds> periodStart, periodEnd;
  std::size_t repeats = kImportanceRepeats;
  std::size_t top = kTopN;
  bool undersampleFlag = false;
  EpochSeconds grace = kDefaultGraceSeconds;
  std::optional<int> port;
  PipelineOptions pipeline;
};

int cmd_synth(const CommonArgs& a, std::ostream& out) {
  ScenarioConfig cfg = a.config.empty() ? ScenarioConfig{} : ScenarioConfig::load(a.config);
  if (a.seedOverride) cfg.seed = *a.seedOverride;
  const GroundTruth truth = generate_to_dir(cfg, a.out);
  out << "synth: " << truth.sessions << " sessions, " << truth.events << " events, " << truth.members.size()
      << " planted members -> " << a.out << '\n';
  return kExitOk;
}

int cmd_ingest(const CommonArgs& a, std::ostream& out) {
  const CodeMap codes = a.codemap.empty() ? CodeMap::defaults() : CodeMap::load(a.codemap);
  auto sessions = open_in(a.sessionsFile);
  auto events = open_in(a.eventsFile);
  IngestOptions opts;
  opts.graceSeconds = a.grace;
  IngestResult r = ingest(sessions, events, codes, opts);
  save_store(r.store, a.store);
  if (!a.report.empty()) write_file(a.report, r.report.to_json());
  out << "ingest: " << r.report.accepted << " accepted, " << r.report.rejected << " rejected ("
      << r.report.sessionsAccepted << " sessions, " << r.report.eventsAccepted << " events)\n";
  return kExitOk;
}

int cmd_cohort(const CommonArgs& a, std::ostream& out) {
  const LogStore store = load_store(a.store);
  EpochSeconds start = 0, end = 0;
  if (!a.truth.empty()) {
    const auto j = nlohmann::json::parse(read_file(a.truth));
    start = j.at("periodStart").get<EpochSeconds>();
    end = j.at("periodEnd").get<EpochSeconds>();
  }
  if (a.periodStart) start = *a.periodStart;
  if (a.periodEnd) end = *a.periodEnd;
  if (start == 0 && end == 0) throw CLI::ValidationError("cohort", "give --period-start/--period-end or --truth");
  std::vector<CohortRecord> records = build_cohorts(store, start, end);
  const std::size_t members = members_of(records).size();
  if (a.undersampleFlag) records = undersample(records, a.seed);
  auto f = open_out(a.out);
  write_cohort_csv(f, records);
  out << "cohort: " << records.size() << " records, " << members << " members\n";
  if (!a.renewals.empty()) {
    std::vector<RenewalObservation> obs;
    for (const auto& m : members_of(records)) obs.push_back(detect_renewal(store, m));
    const RenewalSummary s = summarize_renewals(obs);
    ordered_json j;
    j["members"] = s.members;
    j["observable"] = s.observable;
    j["renewed"] = s.renewed;
    j["observableRate"] = s.observable_rate();
    j["renewalRate"] = s.renewal_rate();
    write_file(a.renewals, j.dump(2));
    out << "renewal: " << s.renewed << "/" << s.observable << " observable members renewed\n";
  }
  return kExitOk;
}

int cmd_features(const CommonArgs& a, std::ostream& out) {
  const LogStore store = load_store(a.store);
  const auto cohort = load_cohort(a.cohort);
  const Pipeline p = make_pipeline(store, a.pipeline);
  const LabeledMatrix m = build_matrix(*p.extractor, cohort);
  auto f = open_out(a.out);
  write_matrix_csv(f, m);
  p.save_caches();
  out << "features: " << m.rows() << " rows x " << m.cols() << " columns, " << m.positives() << " members\n";
  return kExitOk;
}

int cmd_train(const CommonArgs& a, std::ostream& out, bool ablate) {
  LabeledMatrix m = load_matrix(a.matrix);
  if (ablate) m = ablate_chatsim(m);
  const ModelKind kind = kind_from(a.kind);
  auto model = train_model(kind, m, a.cv, a.seed, a.params, a.cvReport, out);
  save_model(a.out, *model, m.columns);
  if (!a.predictions.empty()) write_predictions(a.predictions, *model, m);
  out << (ablate ? "ablate: " : "train: ") << to_string(kind) << " on " << m.rows() << " rows x " << m.cols()
      << " columns -> " << a.out << '\n';
  return kExitOk;
}

int cmd_evaluate(const CommonArgs& a, std::ostream& out) {
  const LogStore store = load_store(a.store);
  const auto cohort = load_cohort(a.cohort);
  const ModelArtifact art = load_model(a.modelPath);
  const Pipeline p = make_pipeline(store, a.pipeline);
  const RecordScorer scorer(*art.model, *p.extractor, art.columns);
  const SessionPools pools(cohort);
  const auto members = members_of(cohort);
  const EvaluationReport report = evaluate_suite(scorer, members, pools);
  ordered_json j;
  j["model"] = to_string(art.model->kind());
  j["columns"] = art.columns.size();
  j["evaluation"] = ordered_json::parse(report.to_json());
  std::vector<BaselineCriterion> baselines;
  if (a.baseline == "chat" || a.baseline == "both") baselines.push_back(BaselineCriterion::ChatCount);
  if (a.baseline == "gift" || a.baseline == "both") baselines.push_back(BaselineCriterion::GiftCount);
  for (auto c : baselines) {
    j["baselines"][std::string(to_string(c))] = ordered_json::parse(evaluate_baseline(store, members, pools, c).to_json());
  }
  write_file(a.report, j.dump(2));
  p.save_caches();
  out << "evaluate: " << report.results.size() << " members, mean percentile " << report.percentile.mean
      << ", top-" << kTopN << " fraction " << report.fractionTopN << '\n';
  return kExitOk;
}

int cmd_importance(const CommonArgs& a, std::ostream& out) {
  const LabeledMatrix m = load_matrix(a.matrix);
  const ModelArtifact art = load_model(a.modelPath, std::span<const FeatureColumn>(m.columns));
  const ImportanceReport r = permutation_importance(*art.model, m, a.repeats, a.seed);
  write_file(a.out, r.to_csv());
  out << "importance: " << r.names.size() << " features, baseline log-loss " << r.baselineLogLoss << '\n';
  return kExitOk;
}

int cmd_chisq(const CommonArgs& a, std::ostream& out) {
  const LogStore store = load_store(a.store);
  const auto cohort = load_cohort(a.cohort);
  std::vector<RenewalObservation> obs;
  for (const auto& m : members_of(cohort)) obs.push_back(detect_renewal(store, m));
  const auto rows = renewal_chi_square(store, obs, a.pipeline.metrics);
  write_file(a.out, renewal_chi_square_json(rows));
  for (const auto& r : rows) {
    out << r.metric << ": ";
    if (r.result) {
      out << "chi2=" << r.result->statistic << " dof=" << r.result->degreesOfFreedom << " p=" << r.result->pValue;
    } else {
      out << "degenerate";
    }
    out << '\n';
  }
  return kExitOk;
}

int cmd_rank(const CommonArgs& a, std::ostream& out) {
  const LogStore store = load_store(a.store);
  const ModelArtifact art = load_model(a.modelPath);
  const auto session = store.find_session(a.session);
  if (!session) throw Error(ErrorCode::UnknownSession, a.session);
  const Pipeline p = make_pipeline(store, a.pipeline);
  const auto rows = batch_rank(store, *session, *art.model, art.columns, *p.extractor);
  RankingPush push;
  push.sessionId = a.session;
  for (const auto& r : rows) {
    if (r.rank < a.top) push.rows.push_back(r);
  }
  const std::string json = push.to_json();
  if (a.out.empty()) {
    out << json << '\n';
  } else {
    write_file(a.out, json);
    out << "rank: " << rows.size() << " viewers ranked, top " << push.rows.size() << " -> " << a.out << '\n';
  }
  return kExitOk;
}

int cmd_serve(const CommonArgs& a, std::ostream& out) {
  ServiceConfig cfg = a.config.empty() ? ServiceConfig{} : ServiceConfig::load(a.config);
  cfg.apply_env([](const char* name) { return std::getenv(name); });
  if (!a.store.empty()) cfg.storePath = a.store;
  if (!a.modelPath.empty()) cfg.modelPath = a.modelPath;
  if (a.port) cfg.port = *a.port;
  cfg.validate();

  const LogStore store = load_store(cfg.storePath);
  ModelArtifact art = load_model(cfg.modelPath, std::span<const FeatureColumn>(feature_columns()));
  PipelineOptions po = a.pipeline;
  if (!cfg.lexiconPath.empty()) po.lexicon = cfg.lexiconPath;
  if (!cfg.embeddingCachePath.empty()) po.embeddingCache = cfg.embeddingCachePath;
  const Pipeline p = make_pipeline(store, po);

  LiveServiceOptions so;
  so.rankingIntervalMs = cfg.rankingIntervalMs;
  so.chatsimIntervalMs = cfg.chatsimIntervalMs;
  so.topN = cfg.topN;
  so.journalDir = cfg.journalDir;
  const CodeMap codes = std::filesystem::exists(cfg.storePath / "codemap.json")
                            ? CodeMap::load(cfg.storePath / "codemap.json")
                            : CodeMap::defaults();
  LiveService service(store, std::shared_ptr<const RankingModel>(std::move(art.model)), art.columns, p.extractor,
                      codes, so);

  ServerOptions opts;
  opts.bindAddress = cfg.bindAddress;
  opts.port = cfg.port;
  opts.bearerToken = cfg.bearerToken;
  opts.uiDir = cfg.uiDir;
  opts.threads = cfg.threads;
  opts.handleSignals = true;
  HttpServer server(service, opts);
  out << "serve: listening on " << cfg.bindAddress << ":" << server.port() << " with "
      << to_string(service.model().kind()) << " model" << std::endl;
  server.run();
  p.save_caches();
  out << "serve: stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"fanranker: rank livestream viewers by their chance of buying a membership"};
  app.require_subcommand(1);
  CommonArgs a;

  auto* synth = app.add_subcommand("synth", "Generate synthetic logs with planted member behavior");
  synth->add_option("--config", a.config, "scenario.json")->check(CLI::ExistingFile);
  synth->add_option("--seed", a.seedOverride, "Override the scenario seed");
  synth->add_option("--out", a.out, "Output directory")->required();

  auto* ingest_cmd = app.add_subcommand("ingest", "Validate JSONL logs into a store directory");
  ingest_cmd->add_option("--sessions", a.sessionsFile, "sessions.jsonl")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--events", a.eventsFile, "events.jsonl")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--codemap", a.codemap, "codemap.json")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--store", a.store, "Store directory to write")->required();
  ingest_cmd->add_option("--report", a.report, "Ingest report JSON");
  ingest_cmd->add_option("--grace", a.grace, "Seconds an event may fall outside its session");

  auto* cohort = app.add_subcommand("cohort", "Build MEMBER / NON_MEMBER records");
  cohort->add_option("--store", a.store)->required();
  cohort->add_option("--period-start", a.periodStart, "Epoch seconds, inclusive");
  cohort->add_option("--period-end", a.periodEnd, "Epoch seconds, exclusive");
  cohort->add_option("--truth", a.truth, "Read the period from a synth groundTruth.json")->check(CLI::ExistingFile);
  cohort->add_flag("--undersample", a.undersampleFlag, "Sample non-members down to the member count");
  cohort->add_option("--seed", a.seed);
  cohort->add_option("--renewals", a.renewals, "Write a renewal summary JSON");
  cohort->add_option("--out", a.out, "cohort.csv")->required();

  auto* features = app.add_subcommand("features", "Extract the 35-column feature matrix");
  features->add_option("--store", a.store)->required();
  features->add_option("--cohort", a.cohort)->required()->check(CLI::ExistingFile);
  features->add_option("--out", a.out, "matrix.csv")->required();
  add_pipeline_options(features, a.pipeline);

  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--matrix", a.matrix)->required()->check(CLI::ExistingFile);
    cmd->add_option("--model", a.kind, "lir, lor, rf, hgb or knn");
    cmd->add_option("--seed", a.seed);
    cmd->add_option("--cv", a.cv, "none, defaults or grid")->check(CLI::IsMember({"none", "defaults", "grid"}));
    cmd->add_option("--cv-report", a.cvReport);
    cmd->add_option("--params", a.params, "Hyperparameter JSON")->check(CLI::ExistingFile);
    cmd->add_option("--predictions", a.predictions, "Write training-set scores CSV");
    cmd->add_option("--out", a.out, "model.frm")->required();
  };
  auto* train = app.add_subcommand("train", "Fit a ranking model");
  add_train_options(train);
  auto* ablate = app.add_subcommand("ablate", "Fit a ranking model without the ChatSim columns");
  add_train_options(ablate);

  auto* evaluate = app.add_subcommand("evaluate", "Rank every member against its session pool");
  evaluate->add_option("--model", a.modelPath)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--cohort", a.cohort)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--store", a.store)->required();
  evaluate->add_option("--report", a.report)->required();
  evaluate->add_option("--baseline", a.baseline, "chat, gift or both")->check(CLI::IsMember({"chat", "gift", "both"}));
  add_pipeline_options(evaluate, a.pipeline);

  auto* importance = app.add_subcommand("importance", "Permutation importance on a held-out matrix");
  importance->add_option("--model", a.modelPath)->required()->check(CLI::ExistingFile);
  importance->add_option("--matrix", a.matrix)->required()->check(CLI::ExistingFile);
  importance->add_option("--repeats", a.repeats)->check(CLI::PositiveNumber);
  importance->add_option("--seed", a.seed);
  importance->add_option("--out", a.out, "importance.csv")->required();

  auto* chisq = app.add_subcommand("chisq", "Chi-square test of activity decline against renewal");
  chisq->add_option("--store", a.store)->required();
  chisq->add_option("--cohort", a.cohort)->required()->check(CLI::ExistingFile);
  chisq->add_option("--out", a.out, "chisq.json")->required();

  auto* rank = app.add_subcommand("rank", "Batch ranking of one finalized session");
  rank->add_option("--store", a.store)->required();
  rank->add_option("--model", a.modelPath)->required()->check(CLI::ExistingFile);
  rank->add_option("--session", a.session)->required();
  rank->add_option("--top", a.top)->check(CLI::PositiveNumber);
  rank->add_option("--out", a.out);
  add_pipeline_options(rank, a.pipeline);

  auto* serve = app.add_subcommand("serve", "Live ranking HTTP / WebSocket service");
  serve->add_option("--config", a.config, "key=value config file")->check(CLI::ExistingFile);
  serve->add_option("--store", a.store);
  serve->add_option("--model", a.modelPath);
  serve->add_option("--port", a.port);
  add_pipeline_options(serve, a.pipeline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(a, out);
    if (*ingest_cmd) return cmd_ingest(a, out);
    if (*cohort) return cmd_cohort(a, out);
    if (*features) return cmd_features(a, out);
    if (*train) return cmd_train(a, out, false);
    if (*ablate) return cmd_train(a, out, true);
    if (*evaluate) return cmd_evaluate(a, out);
    if (*importance) return cmd_importance(a, out);
    if (*chisq) return cmd_chisq(a, out);
    if (*rank) return cmd_rank(a, out);
    if (*serve) return cmd_serve(a, out);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fanranker
