#include "analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "feedback.hpp"
#include "session_log.hpp"

namespace tactwin {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t domain_index(const std::vector<Stimulus>& domain, const Stimulus& s) {
  const auto it = std::find(domain.begin(), domain.end(), s);
  if (it == domain.end()) throw Error(ErrorCode::Validation, "value " + stimulus_label(s) + " outside the domain");
  return static_cast<std::size_t>(it - domain.begin());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

std::vector<std::string> builtin_mode_labels() {
  std::vector<std::string> out;
  for (const auto& m : builtin_modes(default_layout())) out.push_back(m.label());
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::size_t ConfusionMatrix::trace() const noexcept {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

std::size_t ConfusionMatrix::total() const noexcept {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t c : counts[i]) t += c;
    t += rejections[i];
  }
  return t;
}

std::optional<double> ConfusionMatrix::accuracy() const noexcept {
  const std::size_t t = total();
  if (t == 0) return std::nullopt;
  return static_cast<double>(trace()) / static_cast<double>(t);
}

ConfusionMatrix confusion(std::span<const TrialRecord> records, Protocol protocol, const BodySite& site) {
  if (protocol == Protocol::ObjectTask) {
    throw Error(ErrorCode::Validation, "the object task has no discrete response domain");
  }
  const auto domain = stimulus_domain(protocol, site);
  ConfusionMatrix m;
  m.protocol = protocol;
  for (const auto& s : domain) m.labels.push_back(stimulus_label(s));
  m.counts.assign(domain.size(), std::vector<std::size_t>(domain.size(), 0));
  m.rejections.assign(domain.size(), 0);
  for (const auto& r : records) {
    if (protocol_of(r.stimulus) != protocol || (r.response && protocol_of(*r.response) != protocol)) {
      throw Error(ErrorCode::Validation, "records mix protocols");
    }
    const std::size_t row = domain_index(domain, r.stimulus);
    if (r.response) {
      ++m.counts[row][domain_index(domain, *r.response)];
    } else {
      ++m.rejections[row];
    }
  }
  return m;
}

double aggregate_site_score(double acc_intensity, double acc_single, double acc_pair) {
  for (double a : {acc_intensity, acc_single, acc_pair}) {
    if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::InvalidArgument, "accuracies must lie in [0, 1]");
  }
  return (acc_intensity + acc_single + acc_pair) / 3.0;
}

int percent_round(double fraction) { return static_cast<int>(std::round(fraction * 100.0)); }

std::string_view norm_scope_name(NormScope s) noexcept {
  switch (s) {
    case NormScope::PerSubject: return "subject";
    case NormScope::PerSubjectCondition: return "subject-condition";
    case NormScope::Global: return "global";
  }
  return "?";
}

std::optional<NormScope> parse_norm_scope(std::string_view name) noexcept {
  if (name == "subject") return NormScope::PerSubject;
  if (name == "subject-condition" || name == "condition") return NormScope::PerSubjectCondition;
  if (name == "global") return NormScope::Global;
  return std::nullopt;
}

std::vector<double> normalize_times(std::span<const TimedTrial> trials, NormScope scope) {
  if (trials.empty()) throw Error(ErrorCode::Validation, "no durations to normalize");
  auto key = [scope](const TimedTrial& t) -> std::string {
    switch (scope) {
      case NormScope::PerSubject: return t.subject;
      case NormScope::PerSubjectCondition: return t.subject + '\x1f' + t.condition;
      case NormScope::Global: return {};
    }
    return {};
  };
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& t : trials) {
    if (!(t.elapsed_ms > 0.0) || !std::isfinite(t.elapsed_ms)) {
      throw Error(ErrorCode::Validation, "durations must be positive");
    }
    auto& [sum, n] = sums[key(t)];
    sum += t.elapsed_ms;
    ++n;
  }
  std::vector<double> out;
  out.reserve(trials.size());
  for (const auto& t : trials) {
    const auto& [sum, n] = sums.at(key(t));
    out.push_back(t.elapsed_ms / (sum / static_cast<double>(n)));
  }
  return out;
}

ObjectTaskSummary object_task_summary(std::span<const SessionLog> logs, FriedmanBlocks blocks, NormScope scope,
                                      PValueMethod method) {
  ObjectTaskSummary s;
  s.modes = builtin_mode_labels();
  s.scope = scope;
  s.blocks = blocks;

  std::map<std::string, std::map<std::string, const SessionLog*>> by_subject;
  for (const auto& log : logs) {
    if (log.protocol != Protocol::ObjectTask) continue;
    if (!log.complete) throw Error(ErrorCode::Validation, "object-task log " + log.session_id + " is incomplete");
    if (std::find(s.modes.begin(), s.modes.end(), log.config.mode) == s.modes.end()) {
      throw Error(ErrorCode::Validation, "object-task log " + log.session_id + " uses unknown mode " + log.config.mode);
    }
    auto& slot = by_subject[log.participant][log.config.mode];
    if (slot) throw Error(ErrorCode::Validation, "duplicate " + log.config.mode + " log for " + log.participant);
    slot = &log;
  }
  if (by_subject.empty()) throw Error(ErrorCode::Validation, "no object-task logs");

  std::vector<TimedTrial> trials;
  for (const auto& [subject, modes] : by_subject) {
    for (const auto& mode : s.modes) {
      const auto it = modes.find(mode);
      if (it == modes.end()) throw Error(ErrorCode::Validation, subject + " is missing mode " + mode);
      for (const auto& r : it->second->records) {
        if (!r.elapsed_ms) {
          ++s.missing_pickups;
          continue;
        }
        trials.push_back({subject, mode, std::get<ObjectKind>(r.stimulus), *r.elapsed_ms});
      }
    }
  }
  const auto norm = normalize_times(trials, scope);

  std::map<std::string, std::size_t> mode_col;
  for (std::size_t j = 0; j < s.modes.size(); ++j) mode_col[s.modes[j]] = j;
  std::map<std::string, std::vector<std::vector<double>>> cells;  // block -> per-mode values
  std::vector<std::vector<double>> per_mode(s.modes.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    const std::string block =
        blocks == FriedmanBlocks::Subjects ? t.subject : t.subject + "/" + std::string(object_name(t.object));
    auto& row = cells[block];
    row.resize(s.modes.size());
    row[mode_col.at(t.condition)].push_back(norm[i]);
    per_mode[mode_col.at(t.condition)].push_back(norm[i]);
  }
  for (const auto& values : per_mode) s.mean_normalized.push_back(mean(values));
  for (const auto& [label, row] : cells) {
    std::vector<double> means;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j].empty()) throw Error(ErrorCode::Validation, "block " + label + " has no pickups for " + s.modes[j]);
      means.push_back(mean(row[j]));
    }
    s.block_labels.push_back(label);
    s.data.push_back(std::move(means));
  }
  s.friedman = friedman(s.data, method);
  return s;
}

json session_summary(const SessionLog& log) {
  std::size_t correct = 0;
  double score_sum = 0.0;
  for (const auto& r : log.records) {
    correct += r.correct ? 1 : 0;
    score_sum += r.score;
  }
  const double n = static_cast<double>(log.records.size());
  json j{
      {"session_id", log.session_id},
      {"participant", log.participant},
      {"protocol", protocol_name(log.protocol)},
      {"site", log.site.name},
      {"arrangement", arrangement_name(log.site.arrangement)},
      {"num_motors", log.site.num_motors},
      {"mode", log.config.mode},
      {"encoder", log.config.encoder},
      {"threshold", log.config.threshold},
      {"seed", log.config.seed},
      {"pair_policy", pair_policy_name(log.config.pair_policy)},
      {"responder", log.config.responder},
      {"complete", log.complete},
      {"plan_length", log.plan_length},
      {"trials", log.records.size()},
      {"correct", correct},
      {"mean_score", log.records.empty() ? json(nullptr) : json(score_sum / n)},
  };
  if (log.protocol == Protocol::ObjectTask) {
    json objects = json::array();
    std::size_t missing = 0;
    double all_sum = 0.0;
    std::size_t all_n = 0;
    for (ObjectKind o : kAllObjects) {
      double sum = 0.0;
      std::size_t k = 0;
      for (const auto& r : log.records) {
        if (std::get<ObjectKind>(r.stimulus) != o || !r.elapsed_ms) continue;
        sum += *r.elapsed_ms;
        ++k;
      }
      all_sum += sum;
      all_n += k;
      objects.push_back({{"object", object_name(o)},
                         {"pickups", k},
                         {"mean_elapsed_ms", k ? json(sum / static_cast<double>(k)) : json(nullptr)}});
    }
    for (const auto& r : log.records) missing += r.elapsed_ms ? 0 : 1;
    j["objects"] = std::move(objects);
    j["mean_elapsed_ms"] = all_n ? json(all_sum / static_cast<double>(all_n)) : json(nullptr);
    j["missing_pickups"] = missing;
  } else {
    const auto m = confusion(log.records, log.protocol, log.site);
    const auto acc = m.accuracy();
    j["accuracy"] = acc ? json(*acc) : json(nullptr);
    j["confusion"] = {{"labels", m.labels}, {"counts", m.counts}, {"rejections", m.rejections}};
  }
  return j;
}

std::string session_summary_text(const SessionLog& log) { return session_summary(log).dump(2) + "\n"; }

std::vector<SiteScore> site_scores(std::span<const SessionLog> logs) {
  // (participant, site) -> protocol -> pooled records
  std::map<std::pair<std::string, std::string>, std::map<Protocol, std::vector<TrialRecord>>> groups;
  std::map<std::string, BodySite> sites;
  for (const auto& log : logs) {
    if (log.protocol == Protocol::ObjectTask) continue;
    auto& pooled = groups[{log.participant, log.site.name}][log.protocol];
    pooled.insert(pooled.end(), log.records.begin(), log.records.end());
    auto& pooled_all = groups[{"*", log.site.name}][log.protocol];
    pooled_all.insert(pooled_all.end(), log.records.begin(), log.records.end());
    sites.emplace(log.site.name, log.site);
  }
  std::vector<SiteScore> out;
  for (const auto& [key, by_protocol] : groups) {
    if (by_protocol.size() != 3) continue;
    const auto& site = sites.at(key.second);
    auto acc = [&](Protocol p) {
      return confusion(by_protocol.at(p), p, site).accuracy().value_or(0.0);
    };
    SiteScore s;
    s.participant = key.first;
    s.site = key.second;
    s.intensity = acc(Protocol::Intensity);
    s.single = acc(Protocol::SingleLocation);
    s.pair = acc(Protocol::PairLocation);
    s.score = aggregate_site_score(s.intensity, s.single, s.pair);
    s.percent = percent_round(s.score);
    out.push_back(std::move(s));
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "true";
  for (const auto& l : m.labels) out += "," + l;
  out += ",none\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += m.labels[i];
    for (std::size_t c : m.counts[i]) out += "," + std::to_string(c);
    out += "," + std::to_string(m.rejections[i]) + "\n";
  }
  return out;
}

namespace {

json site_scores_json(const std::vector<SiteScore>& scores) {
  json arr = json::array();
  for (const auto& s : scores) {
    arr.push_back({{"participant", s.participant}, {"site", s.site}, {"intensity", s.intensity},
                   {"single", s.single}, {"pair", s.pair}, {"score", s.score}, {"percent", s.percent}});
  }
  return arr;
}

json object_task_json(const ObjectTaskSummary& s) {
  return {{"modes", s.modes},
          {"mean_normalized", s.mean_normalized},
          {"blocks", s.blocks == FriedmanBlocks::Subjects ? "subject" : "subject-object"},
          {"block_labels", s.block_labels},
          {"scope", norm_scope_name(s.scope)},
          {"missing_pickups", s.missing_pickups},
          {"friedman",
           {{"chi2", s.friedman.chi2},
            {"df", s.friedman.df},
            {"p", s.friedman.p},
            {"method", p_value_method_name(s.friedman.method)},
            {"n_blocks", s.friedman.n_blocks},
            {"k_treatments", s.friedman.k_treatments},
            {"rank_sums", s.friedman.rank_sums}}}};
}

bool has_object_study(std::span<const SessionLog> logs) {
  return std::any_of(logs.begin(), logs.end(), [](const SessionLog& l) { return l.protocol == Protocol::ObjectTask; });
}

}  // namespace

json analyze_logs(std::span<const SessionLog> logs, const AnalysisOptions& opts) {
  json sessions = json::array();
  for (const auto& log : logs) sessions.push_back(session_summary(log));
  json out{{"sessions", std::move(sessions)}, {"site_scores", site_scores_json(site_scores(logs))}};
  out["object_task"] = nullptr;
  if (has_object_study(logs)) {
    // A partial study still gets its per-session summaries.
    try {
      out["object_task"] = object_task_json(object_task_summary(logs, opts.blocks, opts.scope, opts.method));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Validation) throw;
      out["object_task"] = {{"error", e.what()}};
    }
  }
  return out;
}

json analyze_path(const std::filesystem::path& input, const std::filesystem::path& report,
                  const AnalysisOptions& opts) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  if (std::filesystem::is_directory(input, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(input)) {
      if (entry.is_regular_file() && entry.path().extension() == kSessionLogExtension) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (std::filesystem::is_regular_file(input, ec)) {
    files.push_back(input);
  } else {
    throw Error(ErrorCode::Io, "no such input " + input.string());
  }
  if (files.empty()) throw Error(ErrorCode::Io, "no session logs under " + input.string());

  std::vector<SessionLog> logs;
  std::set<std::string> ids;
  for (const auto& f : files) {
    logs.push_back(load_session_log(f));
    if (!ids.insert(logs.back().session_id).second) {
      throw Error(ErrorCode::Validation, "duplicate session id " + logs.back().session_id);
    }
  }

  std::filesystem::create_directories(report, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + report.string() + ": " + ec.message());

  const json summary = analyze_logs(logs, opts);
  for (const auto& log : logs) {
    write_file(report / (log.session_id + ".summary.json"), session_summary_text(log));
    if (log.protocol != Protocol::ObjectTask) {
      write_file(report / (log.session_id + ".confusion.csv"),
                 confusion_csv(confusion(log.records, log.protocol, log.site)));
    }
  }

  std::string sites = "participant,site,intensity,single,pair,score,percent\n";
  for (const auto& s : site_scores(logs)) {
    sites += s.participant + "," + s.site + "," + fmt(s.intensity) + "," + fmt(s.single) + "," + fmt(s.pair) + "," +
             fmt(s.score) + "," + std::to_string(s.percent) + "\n";
  }
  write_file(report / "site_scores.csv", sites);

  if (summary["object_task"].contains("modes")) {
    const auto& ot = summary["object_task"];
    std::string csv = "mode,mean_normalized_time\n";
    for (std::size_t j = 0; j < ot["modes"].size(); ++j) {
      csv += ot["modes"][j].get<std::string>() + "," + fmt(ot["mean_normalized"][j].get<double>()) + "\n";
    }
    csv += "# friedman chi2=" + fmt(ot["friedman"]["chi2"].get<double>()) +
           " df=" + std::to_string(ot["friedman"]["df"].get<int>()) + " p=" + fmt(ot["friedman"]["p"].get<double>()) +
           " method=" + ot["friedman"]["method"].get<std::string>() + "\n";
    write_file(report / "object_task.csv", csv);
  }
  write_file(report / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace tactwin
