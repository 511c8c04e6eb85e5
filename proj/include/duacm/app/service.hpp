#pragma once

// Request handling for the interactive risk service. The transport (HTTP
// server, tests) passes method, path, query parameters and body; every
// response body is JSON carrying "schema_version".
//
// Endpoints
//   GET    /api/health
//   GET    /api/patients?offset=&limit=&sort=id|mean|q90|delta&order=asc|desc&q=
//   GET    /api/patients/{id}
//   POST   /api/patients/{id}/predict        {"top_k"?, "driver_threshold"?}
//   POST   /api/sessions                     {"patient_id"}
//   GET    /api/sessions/{sid}
//   POST   /api/sessions/{sid}/rule_out      {"diagnoses": [name or id, ...]}
//   POST   /api/sessions/{sid}/confirm       {"diagnosis": name or id}
//   POST   /api/sessions/{sid}/reset
//   DELETE /api/sessions/{sid}
//
// Errors: {"schema_version", "error": {"kind", "message"}} with status 400
// (bad_request), 404 (not_found), 409 (conflict) or 500 (internal).

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "duacm/app/bundle.hpp"
#include "duacm/app/config.hpp"
#include "duacm/duacm.hpp"

namespace duacm::app {

struct HttpResponse {
  int status = 200;
  std::string body;
};

struct ServiceOptions {
  std::size_t top_k = 5;
  double driver_threshold = 0.05;
  std::vector<double> quantiles = {0.5, 0.9};
  double session_idle_seconds = 1800.0;
};

class Service {
 public:
  using Clock = std::function<double()>;  // seconds, monotone

  Service(ModelBundle bundle, cohort::Cohort cohort, ServiceOptions options,
          Clock clock = nullptr);

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::multimap<std::string, std::string>& query,
                      const std::string& body);

  /// Drops sessions idle for longer than the timeout; returns how many.
  std::size_t expire_idle();
  std::size_t session_count() const;

  const ModelBundle& bundle() const { return bundle_; }

 private:
  struct PatientSummary {
    double mean = 0.0;
    double q90 = 0.0;
    double delta = 0.0;
  };
  struct SessionEntry {
    std::mutex mutex;
    std::string patient_id;
    infer::RuleOutSession session;
    std::atomic<double> last_used;
    SessionEntry(std::string pid, infer::RuleOutSession s, double now)
        : patient_id(std::move(pid)), session(std::move(s)), last_used(now) {}
  };

  nlohmann::ordered_json route(const std::string& method, const std::vector<std::string>& parts,
                               const std::multimap<std::string, std::string>& query,
                               const nlohmann::ordered_json& body, int& status);
  nlohmann::ordered_json list_patients(const std::multimap<std::string, std::string>& query) const;
  nlohmann::ordered_json patient_json(std::size_t index) const;
  nlohmann::ordered_json predict_json(std::size_t index, const nlohmann::ordered_json& body) const;
  nlohmann::ordered_json session_json(const SessionEntry& entry) const;
  nlohmann::ordered_json distribution_json(const infer::RiskDistribution& d) const;
  nlohmann::ordered_json explanation_json(const infer::Explanation& e) const;
  std::size_t patient_index(const std::string& id) const;
  std::shared_ptr<SessionEntry> find_session(const std::string& id) const;
  DiagnosisId resolve_diagnosis(const nlohmann::ordered_json& ref) const;
  infer::SessionConfig session_config() const;

  ModelBundle bundle_;
  cohort::Cohort cohort_;
  ServiceOptions options_;
  Clock clock_;
  std::map<std::string, std::size_t> index_by_id_;
  std::vector<PatientSummary> summaries_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
  std::uint64_t next_session_ = 1;
};

/// HTTP binding of a Service. `static_dir`, when nonempty, is mounted at "/".
class HttpServer {
 public:
  HttpServer(Service& service, std::size_t threads, const std::string& static_dir = "");
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace duacm::app
