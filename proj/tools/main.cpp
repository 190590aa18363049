#include <iostream>

#include "CLI11.hpp"
#include "embridge/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"embedding-bridge experiments on synthetic paired data"};
  std::string config_path, out, mode;
  uint64_t seed = 0;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "experiment config JSON file");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed");
  CLI::Option* out_opt = app.add_option("--out", out, "output directory");
  CLI::Option* mode_opt = app.add_option(
      "--mode", mode, "gen-data | train | eval | sweep | verify | ablate");
  app.add_option("--set", sets,
                 "dotted config override, e.g. stage3.lambda=10; repeatable");

  CLI11_PARSE(app, argc, argv);

  try {
    embridge::ExperimentConfig cfg = config_path.empty()
                                         ? embridge::default_config()
                                         : embridge::load_config(config_path);
    if (*seed_opt) cfg.seed = seed;
    if (*out_opt) cfg.out = out;
    if (*mode_opt) cfg.mode = mode;
    for (const std::string& kv : sets) embridge::apply_override(cfg, kv);
    embridge::run_experiment(cfg);
    return 0;
  } catch (const embridge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const embridge::InvalidSpec& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const embridge::ForbiddenPair& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const embridge::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const embridge::Error& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
