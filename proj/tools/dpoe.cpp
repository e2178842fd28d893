// dpoe command-line interface: synth / inject / train / score / serve / eval.

#include "dpoe/dpoe.hpp"

#include <CLI11.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using Scalar = float;

dpoe::ModelConfig read_train_config(const std::string& path, const dpoe::MultiViewDataset& ds) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.contains("views")) j["views"] = ds.views;
  return dpoe::validate_config(j.get<dpoe::ModelConfig>());
}

void write_scores_csv(const std::string& path, const std::vector<dpoe::ScoredInstance>& scored) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "instance_id,score,argmax_cluster\n";
  out.precision(10);
  for (size_t i = 0; i < scored.size(); ++i)
    out << i << "," << scored[i].score << "," << scored[i].argmax_cluster << "\n";
}

void serve_tcp(const dpoe::Model<Scalar>& model, int port) {
  int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw std::runtime_error("bind() failed on port " + std::to_string(port));
  if (::listen(listener, 8) < 0) throw std::runtime_error("listen() failed");
  std::cerr << "dpoe serve: listening on port " << port << "\n";

  for (;;) {
    int fd = ::accept(listener, nullptr, nullptr);
    if (fd < 0) continue;
    std::string buf;
    char chunk[4096];
    for (;;) {
      ssize_t got = ::recv(fd, chunk, sizeof(chunk), 0);
      if (got <= 0) break;
      buf.append(chunk, static_cast<size_t>(got));
      size_t pos;
      while ((pos = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, pos);
        buf.erase(0, pos + 1);
        if (line.empty()) continue;
        std::string resp = dpoe::handle_request(model, line) + "\n";
        ::send(fd, resp.data(), resp.size(), 0);
      }
    }
    ::close(fd);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dPoE: online multi-view anomaly detection"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic clustered corpus");
  int s_m = 2, s_k = 3, s_n = 2000, s_dim = 20;
  long s_seed = 1;
  std::string s_out;
  synth->add_option("--m", s_m, "number of views");
  synth->add_option("--k", s_k, "number of classes");
  synth->add_option("--n", s_n, "instances");
  synth->add_option("--dim", s_dim, "feature dimension per view");
  synth->add_option("--seed", s_seed, "rng seed");
  synth->add_option("--out", s_out, "output dataset directory")->required();

  // inject
  auto* inject = app.add_subcommand("inject", "inject labeled anomalies into a dataset");
  std::string i_type = "mix", i_data, i_out;
  double i_ratio = 0.1;
  long i_seed = 1;
  inject->add_option("--type", i_type, "1|2|3|mix")->check(CLI::IsMember({"1", "2", "3", "mix"}));
  inject->add_option("--ratio", i_ratio, "anomaly ratio (ignored for mix)");
  inject->add_option("--seed", i_seed, "rng seed");
  inject->add_option("--data", i_data, "input dataset directory")->required();
  inject->add_option("--out", i_out, "output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a dPoE model");
  std::string t_config, t_data, t_out, t_telemetry;
  std::vector<std::string> t_ablate;
  train->add_option("--config", t_config, "model config JSON")->required();
  train->add_option("--data", t_data, "dataset directory")->required();
  train->add_option("--out", t_out, "checkpoint path")->required();
  train->add_option("--telemetry", t_telemetry, "telemetry CSV path");
  train->add_option("--ablate", t_ablate, "disable components: Cc|Cs|poe|tc")
      ->check(CLI::IsMember({"Cc", "Cs", "poe", "tc"}));

  // score
  auto* score = app.add_subcommand("score", "batch-score a dataset");
  std::string sc_ckpt, sc_data, sc_out;
  score->add_option("--ckpt", sc_ckpt, "checkpoint path")->required();
  score->add_option("--data", sc_data, "dataset directory")->required();
  score->add_option("--out", sc_out, "scores CSV path")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "online scoring over newline-delimited JSON");
  std::string sv_ckpt;
  int sv_port = 0;
  bool sv_stdio = false;
  serve->add_option("--ckpt", sv_ckpt, "checkpoint path")->required();
  serve->add_option("--port", sv_port, "TCP port");
  serve->add_flag("--stdio", sv_stdio, "serve over stdin/stdout");

  // eval
  auto* eval = app.add_subcommand("eval", "run the experiment protocol");
  std::string e_spec, e_out;
  eval->add_option("--spec", e_spec, "experiment spec JSON")->required();
  eval->add_option("--out", e_out, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      auto ds = dpoe::make_synthetic(s_m, s_k, s_n, s_dim, s_seed);
      dpoe::save_dataset(ds, s_out);
      std::cout << "wrote " << ds.n() << " instances to " << s_out << "\n";
    } else if (*inject) {
      auto ds = dpoe::load_dataset(i_data);
      auto [injected, report] = i_type == "mix"  ? dpoe::inject_mix(ds, i_seed)
                                : i_type == "1"  ? dpoe::inject_type1(ds, i_ratio, i_seed)
                                : i_type == "2"  ? dpoe::inject_type2(ds, i_ratio, i_seed)
                                                 : dpoe::inject_type3(ds, i_ratio, i_seed);
      dpoe::save_dataset(injected, i_out);
      std::ofstream rf(std::filesystem::path(i_out) / "injection_report.json");
      rf << nlohmann::json(report).dump(2) << "\n";
      std::cout << "injected " << report.total() << " anomalies into " << i_out << "\n";
    } else if (*train) {
      auto ds = dpoe::load_dataset(t_data);
      auto cfg = read_train_config(t_config, ds);
      for (const auto& a : t_ablate) {
        if (a == "Cc") cfg.ablation.use_Cc = false;
        if (a == "Cs") cfg.ablation.use_Cs = false;
        if (a == "poe") cfg.ablation.use_poe = false;
        if (a == "tc") cfg.ablation.use_tc = false;
      }
      std::ofstream tf;
      if (!t_telemetry.empty()) tf.open(t_telemetry);
      auto state = dpoe::fit<Scalar>(cfg, ds, t_telemetry.empty() ? nullptr : &tf);
      dpoe::save_checkpoint(state, t_out);
      std::cout << "trained " << state.epoch << " epochs, checkpoint at " << t_out << "\n";
    } else if (*score) {
      auto model = dpoe::load_checkpoint<Scalar>(sc_ckpt);
      auto ds = dpoe::load_dataset(sc_data);
      write_scores_csv(sc_out, dpoe::score_batch(model, ds));
      std::cout << "wrote scores to " << sc_out << "\n";
    } else if (*serve) {
      auto model = dpoe::load_checkpoint<Scalar>(sv_ckpt);
      if (sv_stdio || sv_port == 0)
        dpoe::serve_stream(model, std::cin, std::cout);
      else
        serve_tcp(model, sv_port);
    } else if (*eval) {
      std::ifstream in(e_spec);
      if (!in) throw std::runtime_error("missing spec file: " + e_spec);
      nlohmann::json j = nlohmann::json::parse(in);
      std::vector<dpoe::ExperimentSpec> specs;
      if (j.is_array())
        for (const auto& sj : j) specs.push_back(sj.get<dpoe::ExperimentSpec>());
      else
        specs.push_back(j.get<dpoe::ExperimentSpec>());
      std::vector<dpoe::ResultRow> rows;
      for (const auto& spec : specs) {
        dpoe::run_experiment<Scalar>(spec, rows);
        for (const auto& r : rows)
          if (r.spec_id == spec.id)
            std::cout << spec.id << " seed " << r.seed << ": AUC " << r.auc << "\n";
      }
      dpoe::emit_report(rows, e_out);
      std::cout << "report written to " << e_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
