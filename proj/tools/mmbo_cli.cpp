#include "mmbo/runner.hpp"
#include "mmbo/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

httplib::Server* active_server = nullptr;

void stop_server(int) {
  if (active_server) active_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal multi-fidelity preference BO"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "execute every (method, seed) run of a benchmark manifest");
  std::string manifest;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  run->add_option("--manifest,-m", manifest, "manifest JSON file")->required();
  run->add_option("--out,-o", out_dir, "output directory (regret.csv, trace.jsonl, diagnostics.json)");
  run->add_option("--seed", seed, "run only this seed, overriding the manifest's list");

  auto* serve = app.add_subcommand("serve", "HTTP session service for live preference elicitation");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_dir = "sessions";
  serve->add_option("--port,-p", port, "listen port");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--data-dir", data_dir, "directory holding one JSON file per session");

  CLI11_PARSE(app, argc, argv);

  if (*run) return mmbo::run_manifest(manifest, out_dir, seed, std::cout, std::cerr);

  mmbo::SessionManager sessions(data_dir);
  httplib::Server server;
  mmbo::install_routes(server, sessions);
  active_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << "listening on http://" << host << ':' << port << " (sessions in " << data_dir << ")" << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "could not listen on " << host << ':' << port << '\n';
    return 1;
  }
  return 0;
}
