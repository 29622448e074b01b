#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dap/pipeline.hpp"
#include "dap/tensor.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDependencyError = 3;
constexpr int kContractViolation = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft visual prompt tuning and graph-world navigation pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("--config", config_path, "key=value run configuration file");
  app.add_option("--seed", seed, "root seed (overrides the config)");
  app.add_option("--out", out, "output root; stages write to <out>/<config hash>/<stage>/")->capture_default_str();
  app.add_option("--set", overrides, "override one config entry, key=value (repeatable)");
  app.add_flag("--quiet", quiet, "suppress progress lines");

  std::vector<CLI::App*> stages;
  for (const auto& name : dap::stage_names()) stages.push_back(app.add_subcommand(name, "run the " + name + " stage"));
  CLI::App* run = app.add_subcommand("run", "run every stage except ablate-k");
  CLI::App* show = app.add_subcommand("config", "print the resolved configuration and its hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    dap::RunConfig config = config_path.empty() ? dap::RunConfig() : dap::RunConfig::load(config_path);
    for (const auto& o : overrides) config.apply(o);
    if (seed) config.set("seed", std::to_string(*seed));
    if (show->parsed()) {
      std::cout << config.canonical() << "hash=" << config.hash() << "\n";
      return kOk;
    }
    dap::Pipeline pipeline(config, out, quiet ? nullptr : &std::cerr);
    if (run->parsed()) {
      pipeline.run_all();
    } else {
      for (auto* sub : stages)
        if (sub->parsed()) pipeline.run_stage(sub->get_name());
    }
    std::cout << pipeline.run_dir().string() << "\n";
    return kOk;
  } catch (const dap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const dap::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return kDependencyError;
  } catch (const dap::ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kContractViolation;
  } catch (const dap::ShapeError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kContractViolation;
  } catch (const dap::FrozenViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kContractViolation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
