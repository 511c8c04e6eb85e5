// duacm command-line entry point: generate, train, evaluate, predict,
// experiment, serve and print-config.

#include <csignal>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "duacm/app/bundle.hpp"
#include "duacm/app/config.hpp"
#include "duacm/app/pipeline.hpp"
#include "duacm/app/service.hpp"
#include "duacm/cohort_io.hpp"
#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace {

using duacm::app::RunConfig;
using json = nlohmann::ordered_json;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig base = o.config_path.empty() ? RunConfig{} : duacm::app::load_config(o.config_path);
  json j = duacm::app::to_json(base);
  for (const auto& a : o.overrides) duacm::app::apply_override(j, a);
  if (o.seed) j["seed"] = *o.seed;
  return duacm::app::config_from_json(j);
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run config (defaults apply for missing keys)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed, overrides the config");
  cmd->add_option("--set", o.overrides, "config override, e.g. --set gam.learning_rate=0.02")
      ->take_all();
}

duacm::cohort::Cohort cohort_or_generate(const std::string& path, const RunConfig& config) {
  if (!path.empty()) return duacm::cohort::load_cohort(path);
  return duacm::cohort::generate_cohort(config.cohort);
}

// Reads a split of `cohort` under the configuration the bundle was trained
// with, so that "test" means the records the models never saw.
duacm::cohort::Cohort bundle_split(const duacm::app::ModelBundle& bundle,
                                   const duacm::cohort::Cohort& cohort,
                                   const std::string& split_name) {
  const auto part = duacm::app::parse_split_part(split_name);
  if (part == duacm::app::SplitPart::kAll) return cohort;
  const std::string fp = duacm::app::cohort_fingerprint(cohort);
  if (fp != bundle.provenance.data_fingerprint) {
    throw duacm::ValidationError("--split " + split_name +
                                 " needs the cohort the bundle was trained on (fingerprint " +
                                 bundle.provenance.data_fingerprint + ", got " + fp + ")");
  }
  const auto trained_with = duacm::app::config_from_json(bundle.provenance.config);
  return duacm::app::select_part(cohort, trained_with, part);
}

void write_table_checked(const std::string& path, const duacm::Table& t) {
  duacm::write_file_atomically(path, t.to_tsv());
  const auto back = duacm::Table::from_tsv(duacm::read_file(path));
  if (back.columns != t.columns || back.rows.size() != t.rows.size()) {
    throw duacm::Error("written table " + path + " does not read back");
  }
}

void print_error(const std::string& kind, const std::string& message) {
  json e = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << e.dump() << "\n";
}

int serve(duacm::app::Service& service, const RunConfig& config, const std::string& static_dir) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  duacm::app::HttpServer server(service, config.serve.threads, static_dir);
  const int port = server.bind(config.serve.host, config.serve.port);
  std::cout << json{{"listening", {{"host", config.serve.host}, {"port", port}}}}.dump()
            << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen();
  // listen() can also return on its own (socket failure); wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagnosis-uncertain all-cause mortality risk toolkit"};
  app.require_subcommand(1);
  CommonOptions common;

  std::string out, cohort_path, bundle_path, split_name = "test", static_dir, host;
  std::optional<int> port;
  std::string experiment_name;

  auto* generate = app.add_subcommand("generate", "write a synthetic cohort file");
  add_common(generate, common);
  generate->add_option("--out", out, "cohort file to write")->required();

  auto* train = app.add_subcommand("train", "fit the outcome and diagnosis models");
  add_common(train, common);
  train->add_option("--cohort", cohort_path, "training cohort")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "model bundle to write")->required();

  auto* evaluate = app.add_subcommand("evaluate", "metric report on a labeled cohort");
  add_common(evaluate, common);
  evaluate->add_option("--bundle", bundle_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--cohort", cohort_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", split_name, "all, train, valid or test")->capture_default_str();
  evaluate->add_option("--out", out, "report table to write")->required();

  auto* predict = app.add_subcommand("predict", "per-patient risk distribution table");
  add_common(predict, common);
  predict->add_option("--bundle", bundle_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--cohort", cohort_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--split", split_name, "all, train, valid or test")->capture_default_str();
  predict->add_option("--out", out, "prediction table to write")->required();

  auto* experiment = app.add_subcommand("experiment", "run a named experiment");
  add_common(experiment, common);
  experiment->add_option("name", experiment_name)
      ->required()
      ->check(CLI::IsMember(duacm::app::experiment_names()));
  experiment->add_option("--cohort", cohort_path, "cohort (generated from the config if absent)")
      ->check(CLI::ExistingFile);
  experiment->add_option("--bundle", bundle_path, "bundle for du-summary")->check(CLI::ExistingFile);
  experiment->add_option("--out", out, "output directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for the interactive console");
  add_common(serve_cmd, common);
  serve_cmd->add_option("--bundle", bundle_path)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--cohort", cohort_path)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", host, "overrides serve.host");
  serve_cmd->add_option("--port", port, "overrides serve.port; 0 picks a free port");
  serve_cmd->add_option("--static", static_dir, "directory of UI assets mounted at /")
      ->check(CLI::ExistingDirectory);

  auto* print_config = app.add_subcommand("print-config", "print the resolved config as JSON");
  add_common(print_config, common);
  print_config->add_option("--out", out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    RunConfig config = resolve_config(common);

    if (*generate) {
      const auto c = duacm::cohort::generate_cohort(config.cohort);
      duacm::cohort::save_cohort(c, out);
      if (duacm::cohort::load_cohort(out) != c) throw duacm::Error("cohort file does not read back");
    } else if (*train) {
      const auto c = duacm::cohort::load_cohort(cohort_path);
      const auto bundle = duacm::app::train_bundle(c, config);
      duacm::app::save_bundle(bundle, out);
      duacm::app::load_bundle(out);
    } else if (*evaluate) {
      const auto bundle = duacm::app::load_bundle(bundle_path);
      const auto c = bundle_split(bundle, duacm::cohort::load_cohort(cohort_path), split_name);
      write_table_checked(out, duacm::app::evaluate_bundle(bundle, c, config));
    } else if (*predict) {
      const auto bundle = duacm::app::load_bundle(bundle_path);
      const auto c = bundle_split(bundle, duacm::cohort::load_cohort(cohort_path), split_name);
      const auto preds = duacm::app::predict_cohort(bundle, c, config.predict,
                                                    duacm::app::prediction_seed(config));
      write_table_checked(out, duacm::app::prediction_table(bundle, preds, config.predict));
    } else if (*experiment) {
      const auto c = cohort_or_generate(cohort_path, config);
      std::optional<duacm::app::ModelBundle> bundle;
      if (!bundle_path.empty()) bundle = duacm::app::load_bundle(bundle_path);
      const auto files = duacm::app::run_experiment(experiment_name, c, config, bundle, out);
      for (const auto& f : files) {
        duacm::Table::from_tsv(duacm::read_file(std::filesystem::path(out) / f));
      }
    } else if (*serve_cmd) {
      if (!host.empty()) config.serve.host = host;
      if (port) config.serve.port = *port;
      duacm::app::ServiceOptions options;
      options.top_k = config.predict.top_k;
      options.driver_threshold = config.predict.driver_threshold;
      options.quantiles = config.predict.quantiles;
      options.session_idle_seconds = config.serve.session_idle_seconds;
      duacm::app::Service service(duacm::app::load_bundle(bundle_path),
                                  duacm::cohort::load_cohort(cohort_path), options);
      return serve(service, config, static_dir);
    } else if (*print_config) {
      const std::string text = duacm::app::to_json(config).dump(2) + "\n";
      if (out.empty()) {
        std::cout << text;
      } else {
        duacm::write_file_atomically(out, text);
      }
    }
  } catch (const duacm::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
