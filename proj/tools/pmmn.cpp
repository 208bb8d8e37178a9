#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include "pmmn/pmmn.hpp"

namespace {

const std::map<std::string, std::string> kFlagKeys = {
    {"simple_mem", "--simple-mem"}, {"ha_only", "--ha-only"}};
const std::map<std::string, std::string> kNegatedKeys = {
    {"record_timing", "--no-timing"}, {"zero_is_missing", "--keep-zeros"}};

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
};

void register_options(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("-c,--config", ov.config_file, "key = value configuration file");
  for (const auto& key : pmmn::RunConfig::keys()) {
    if (auto f = kFlagKeys.find(key); f != kFlagKeys.end()) {
      cmd->add_flag(f->second, ov.flags[key], "set " + key);
    } else if (auto n = kNegatedKeys.find(key); n != kNegatedKeys.end()) {
      cmd->add_flag(n->second, ov.flags[key], "clear " + key);
    } else {
      cmd->add_option(flag_name(key), ov.values[key], key);
    }
  }
}

pmmn::RunConfig resolve(const CLI::App* cmd, const Overrides& ov) {
  pmmn::RunConfig cfg;
  if (!ov.config_file.empty()) pmmn::load_config_file(cfg, ov.config_file);
  if (const char* seed = std::getenv("PMMN_SEED"); seed && *seed) cfg.set("seed", seed);
  for (const auto& [key, value] : ov.values) {
    if (cmd->count(flag_name(key)) > 0) cfg.set(key, value);
  }
  for (const auto& [key, set] : ov.flags) {
    if (!set) continue;
    cfg.set(key, kNegatedKeys.count(key) ? "0" : "1");
  }
  return cfg;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pattern-matching memory network traffic forecaster"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    Overrides ov;
  };
  std::vector<Command> commands = {
      {"extract-patterns", "cluster training-split daily patterns into a key bank", {}},
      {"train", "train a model against a pattern bank", {}},
      {"evaluate", "per-horizon MAE / MAPE / RMSE against the historical average", {}},
      {"forecast", "write per-node multi-horizon forecasts", {}},
      {"synth", "generate a synthetic road network dataset", {}}};
  for (auto& c : commands) register_options(app.add_subcommand(c.name, c.help), c.ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    for (auto& c : commands) {
      const CLI::App* cmd = app.get_subcommand(c.name);
      if (!cmd->parsed()) continue;
      const auto cfg = resolve(cmd, c.ov);
      const std::string name = c.name;
      if (name == "extract-patterns") pmmn::cmd_extract_patterns(cfg, std::cout);
      else if (name == "train") pmmn::cmd_train(cfg, std::cout);
      else if (name == "evaluate") pmmn::cmd_evaluate(cfg, std::cout);
      else if (name == "forecast") pmmn::cmd_forecast(cfg, std::cout);
      else pmmn::cmd_synth(cfg, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
