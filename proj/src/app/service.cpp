#include "duacm/app/service.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "httplib.h"

#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm::app {

using json = nlohmann::ordered_json;

namespace {

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<std::string> path_parts(const std::string& path) {
  std::vector<std::string> parts;
  for (auto p : split_view(path, '/')) {
    if (!p.empty()) parts.emplace_back(p);
  }
  return parts;
}

json error_body(const std::string& kind, const std::string& message) {
  return {{"schema_version", kSchemaVersion}, {"error", {{"kind", kind}, {"message", message}}}};
}

std::string query_value(const std::multimap<std::string, std::string>& q, const std::string& key,
                        const std::string& fallback) {
  auto it = q.find(key);
  return it == q.end() ? fallback : it->second;
}

std::size_t query_count(const std::multimap<std::string, std::string>& q, const std::string& key,
                        std::size_t fallback) {
  auto it = q.find(key);
  if (it == q.end()) return fallback;
  const auto v = parse_integer(it->second);
  if (!v || *v < 0) throw ValidationError("query parameter '" + key + "' must be a count");
  return static_cast<std::size_t>(*v);
}

}  // namespace

Service::Service(ModelBundle bundle, cohort::Cohort cohort, ServiceOptions options, Clock clock)
    : bundle_(std::move(bundle)),
      cohort_(std::move(cohort)),
      options_(std::move(options)),
      clock_(clock ? std::move(clock) : Clock(steady_seconds)) {
  bundle_.validate();
  if (cohort_.n_features() != bundle_.schema.size()) {
    throw SchemaError("cohort has " + std::to_string(cohort_.n_features()) +
                      " features, the bundle expects " + std::to_string(bundle_.schema.size()));
  }
  if (std::find(options_.quantiles.begin(), options_.quantiles.end(), 0.9) ==
      options_.quantiles.end()) {
    options_.quantiles.push_back(0.9);
  }
  std::sort(options_.quantiles.begin(), options_.quantiles.end());
  const auto cfg = session_config();
  for (std::size_t i = 0; i < cohort_.size(); ++i) {
    const auto& r = cohort_.records[i];
    index_by_id_.emplace(r.id, i);
    const auto d = infer::risk_from_posterior(
        bundle_.outcome_model, r.features,
        diag::predict_diagnosis(bundle_.diagnosis_model, r.features), cfg.predict);
    summaries_.push_back({d.mean, d.quantile(0.9), infer::pessimistic_delta(d)});
  }
}

infer::SessionConfig Service::session_config() const {
  infer::SessionConfig c;
  c.predict.mode = infer::Mode::kExact;
  c.predict.quantiles = options_.quantiles;
  return c;
}

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const std::multimap<std::string, std::string>& query,
                             const std::string& body) {
  expire_idle();
  HttpResponse resp;
  try {
    json parsed = json::object();
    if (!body.empty()) {
      try {
        parsed = json::parse(body);
      } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed request body: ") + e.what());
      }
      if (!parsed.is_object()) throw ParseError("request body must be a JSON object");
    }
    int status = 200;
    json out = route(method, path_parts(path), query, parsed, status);
    json wrapped = {{"schema_version", kSchemaVersion}};
    for (auto it = out.begin(); it != out.end(); ++it) wrapped[it.key()] = it.value();
    resp.status = status;
    resp.body = wrapped.dump();
  } catch (const NotFoundError& e) {
    resp = {404, error_body("not_found", e.what()).dump()};
  } catch (const ConflictError& e) {
    resp = {409, error_body("conflict", e.what()).dump()};
  } catch (const Error& e) {
    resp = {400, error_body("bad_request", e.what()).dump()};
  } catch (const json::exception& e) {
    resp = {400, error_body("bad_request", e.what()).dump()};
  } catch (const std::exception& e) {
    resp = {500, error_body("internal", e.what()).dump()};
  }
  return resp;
}

json Service::route(const std::string& method, const std::vector<std::string>& parts,
                    const std::multimap<std::string, std::string>& query, const json& body,
                    int& status) {
  auto not_found = [&]() -> json {
    std::string p;
    for (const auto& s : parts) p += "/" + s;
    throw NotFoundError("no endpoint " + method + " " + (p.empty() ? "/" : p));
  };
  if (parts.size() < 2 || parts[0] != "api") return not_found();
  const std::string& area = parts[1];

  if (area == "health" && parts.size() == 2 && method == "GET") {
    return {{"status", "ok"},
            {"n_patients", cohort_.size()},
            {"n_diagnoses", bundle_.diagnosis_model.vocabulary.size()},
            {"n_sessions", session_count()},
            {"config_hash", bundle_.provenance.config_hash}};
  }

  if (area == "patients") {
    if (parts.size() == 2 && method == "GET") return list_patients(query);
    if (parts.size() >= 3) {
      const std::size_t idx = patient_index(parts[2]);
      if (parts.size() == 3 && method == "GET") return {{"patient", patient_json(idx)}};
      if (parts.size() == 4 && parts[3] == "predict" && method == "POST") {
        return predict_json(idx, body);
      }
    }
    return not_found();
  }

  if (area == "sessions") {
    if (parts.size() == 2 && method == "POST") {
      if (!body.contains("patient_id") || !body["patient_id"].is_string()) {
        throw ValidationError("body must contain a string 'patient_id'");
      }
      const std::string pid = body["patient_id"].get<std::string>();
      const std::size_t idx = patient_index(pid);
      std::string sid;
      {
        std::lock_guard lock(sessions_mutex_);
        sid = "s" + std::to_string(next_session_++);
      }
      auto entry = std::make_shared<SessionEntry>(
          pid,
          infer::RuleOutSession(sid, bundle_.outcome_model, bundle_.diagnosis_model,
                                cohort_.records[idx].features, session_config()),
          clock_());
      {
        std::lock_guard lock(sessions_mutex_);
        sessions_.emplace(sid, entry);
      }
      status = 201;
      std::lock_guard lock(entry->mutex);
      return {{"session", session_json(*entry)}};
    }
    if (parts.size() >= 3) {
      const auto entry = find_session(parts[2]);
      if (parts.size() == 3 && method == "DELETE") {
        std::lock_guard lock(sessions_mutex_);
        sessions_.erase(parts[2]);
        return {{"deleted", parts[2]}};
      }
      std::lock_guard lock(entry->mutex);
      entry->last_used = clock_();
      if (parts.size() == 3 && method == "GET") return {{"session", session_json(*entry)}};
      if (parts.size() == 4 && method == "POST") {
        const std::string& op = parts[3];
        if (op == "rule_out") {
          if (!body.contains("diagnoses") || !body["diagnoses"].is_array()) {
            throw ValidationError("body must contain an array 'diagnoses'");
          }
          std::set<DiagnosisId> ids;
          for (const auto& ref : body["diagnoses"]) ids.insert(resolve_diagnosis(ref));
          entry->session.rule_out(ids);
          return {{"session", session_json(*entry)}};
        }
        if (op == "confirm") {
          if (!body.contains("diagnosis")) throw ValidationError("body must contain 'diagnosis'");
          entry->session.confirm(resolve_diagnosis(body["diagnosis"]));
          return {{"session", session_json(*entry)}};
        }
        if (op == "reset") {
          entry->session.reset();
          return {{"session", session_json(*entry)}};
        }
      }
    }
    return not_found();
  }
  return not_found();
}

std::size_t Service::patient_index(const std::string& id) const {
  auto it = index_by_id_.find(id);
  if (it == index_by_id_.end()) throw NotFoundError("unknown patient '" + id + "'");
  return it->second;
}

std::shared_ptr<Service::SessionEntry> Service::find_session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

DiagnosisId Service::resolve_diagnosis(const json& ref) const {
  const auto& vocab = bundle_.diagnosis_model.vocabulary;
  if (ref.is_number_unsigned()) {
    const auto d = ref.get<DiagnosisId>();
    if (std::find(vocab.begin(), vocab.end(), d) == vocab.end()) {
      throw ValidationError("diagnosis " + std::to_string(d) + " is not in the model vocabulary");
    }
    return d;
  }
  if (ref.is_string()) {
    const auto name = ref.get<std::string>();
    for (DiagnosisId d : vocab) {
      if (bundle_.diagnosis_vocab[d] == name) return d;
    }
    throw ValidationError("diagnosis '" + name + "' is not in the model vocabulary");
  }
  throw ValidationError("a diagnosis is referenced by name or numeric id");
}

json Service::list_patients(const std::multimap<std::string, std::string>& query) const {
  const std::string sort = query_value(query, "sort", "id");
  const std::string order = query_value(query, "order", sort == "id" ? "asc" : "desc");
  const std::string search = query_value(query, "q", "");
  const std::size_t offset = query_count(query, "offset", 0);
  const std::size_t limit = query_count(query, "limit", 100);
  if (order != "asc" && order != "desc") throw ValidationError("order must be asc or desc");

  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cohort_.size(); ++i) {
    if (search.empty() || cohort_.records[i].id.find(search) != std::string::npos) idx.push_back(i);
  }
  auto key = [&](std::size_t i) {
    if (sort == "mean") return summaries_[i].mean;
    if (sort == "q90") return summaries_[i].q90;
    return summaries_[i].delta;
  };
  if (sort == "id") {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return cohort_.records[a].id < cohort_.records[b].id;
    });
  } else if (sort == "mean" || sort == "q90" || sort == "delta") {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  } else {
    throw ValidationError("sort must be one of id, mean, q90, delta");
  }
  if (order == "desc") std::reverse(idx.begin(), idx.end());

  json items = json::array();
  for (std::size_t k = offset; k < idx.size() && k < offset + limit; ++k) {
    const std::size_t i = idx[k];
    items.push_back({{"id", cohort_.records[i].id},
                     {"mean", summaries_[i].mean},
                     {"q90", summaries_[i].q90},
                     {"delta", summaries_[i].delta}});
  }
  return {{"total", idx.size()}, {"offset", offset}, {"patients", items}};
}

json Service::patient_json(std::size_t i) const {
  const auto& r = cohort_.records[i];
  json features = json::array();
  for (std::size_t j = 0; j < r.features.size(); ++j) {
    features.push_back({{"name", cohort_.schema.names[j]}, {"value", r.features[j]}});
  }
  json j = {{"id", r.id},
            {"features", features},
            {"recorded_diagnosis", r.diagnosis ? json(cohort_.diagnosis_vocab[*r.diagnosis]) : json(nullptr)},
            {"mean", summaries_[i].mean},
            {"q90", summaries_[i].q90},
            {"delta", summaries_[i].delta}};
  return j;
}

json Service::predict_json(std::size_t i, const json& body) const {
  std::size_t top_k = options_.top_k;
  double threshold = options_.driver_threshold;
  if (body.contains("top_k")) top_k = body["top_k"].get<std::size_t>();
  if (body.contains("driver_threshold")) threshold = body["driver_threshold"].get<double>();
  const auto& r = cohort_.records[i];
  const auto d = infer::risk_from_posterior(
      bundle_.outcome_model, r.features,
      diag::predict_diagnosis(bundle_.diagnosis_model, r.features), session_config().predict);
  return {{"patient_id", r.id},
          {"distribution", distribution_json(d)},
          {"pessimistic_delta", infer::pessimistic_delta(d)},
          {"explanation", explanation_json(infer::explain(d, top_k, threshold))}};
}

json Service::distribution_json(const infer::RiskDistribution& d) const {
  json entries = json::array();
  for (const auto& e : d.entries) {
    entries.push_back({{"diagnosis", e.diagnosis},
                       {"name", bundle_.diagnosis_vocab[e.diagnosis]},
                       {"weight", e.weight},
                       {"conditional_risk", e.conditional_risk}});
  }
  json quantiles = json::array();
  for (const auto& [q, v] : d.quantiles) quantiles.push_back({{"q", q}, {"value", v}});
  return {{"mode", mode_name(d.mode)},
          {"mean", d.mean},
          {"quantiles", quantiles},
          {"entries", entries},
          {"n_samples", d.n_samples},
          {"seed", d.seed},
          {"offset_fallback", d.offset_fallback}};
}

json Service::explanation_json(const infer::Explanation& e) const {
  json ranked = json::array();
  for (const auto& item : e.ranked) {
    ranked.push_back({{"diagnosis", item.diagnosis},
                      {"name", bundle_.diagnosis_vocab[item.diagnosis]},
                      {"probability", item.probability},
                      {"conditional_risk", item.conditional_risk},
                      {"risk_driver", item.risk_driver}});
  }
  json drivers = json::array();
  for (DiagnosisId d : e.drivers) drivers.push_back(bundle_.diagnosis_vocab[d]);
  return {{"ranked", ranked}, {"drivers", drivers}};
}

json Service::session_json(const SessionEntry& entry) const {
  const auto& s = entry.session;
  const auto posterior = s.posterior();
  json diagnoses = json::array();
  for (std::size_t k = 0; k < posterior.diagnoses.size(); ++k) {
    const DiagnosisId d = posterior.diagnoses[k];
    diagnoses.push_back({{"diagnosis", d},
                         {"name", bundle_.diagnosis_vocab[d]},
                         {"base_probability", s.base().probabilities[k]},
                         {"probability", posterior.probabilities[k]},
                         {"excluded", s.excluded().contains(d)}});
  }
  json excluded = json::array();
  for (DiagnosisId d : s.excluded()) excluded.push_back(bundle_.diagnosis_vocab[d]);
  return {{"id", s.id()},
          {"patient_id", entry.patient_id},
          {"excluded", excluded},
          {"confirmed", s.confirmed() ? json(bundle_.diagnosis_vocab[*s.confirmed()]) : json(nullptr)},
          {"diagnoses", diagnoses},
          {"distribution", distribution_json(s.current())},
          {"pessimistic_delta", infer::pessimistic_delta(s.current())},
          {"explanation",
           explanation_json(infer::explain(s.current(), options_.top_k, options_.driver_threshold))}};
}

std::size_t Service::expire_idle() {
  const double now = clock_();
  std::lock_guard lock(sessions_mutex_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_used.load() > options_.session_idle_seconds) {
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

std::size_t Service::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  bool bound = false;
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service, std::size_t threads, const std::string& static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  const std::size_t n = std::max<std::size_t>(1, threads);
  impl_->server.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
    const auto out = impl_->service.handle(req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get("/api/.*", dispatch);
  impl_->server.Post("/api/.*", dispatch);
  impl_->server.Delete("/api/.*", dispatch);
  impl_->server.Options("/api/.*", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });
  impl_->server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  if (!static_dir.empty() && !impl_->server.set_mount_point("/", static_dir)) {
    throw ValidationError("static directory '" + static_dir + "' does not exist");
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void HttpServer::listen() {
  if (!impl_->bound) throw Error("listen() called before bind()");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace duacm::app
