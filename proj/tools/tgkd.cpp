// tgkd command-line front end.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "tgkd/commands.hpp"
#include "tgkd/config.hpp"
#include "tgkd/errors.hpp"

namespace {

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Overrides& ov) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", ov.config_file, "key = value config file");
  for (const tgkd::KeySpec& spec : tgkd::config_schema()) {
    if (spec.section != "common" && spec.section != name) continue;
    std::string desc = spec.help + " [default: " + spec.default_value + "]";
    sub->add_option_function<std::string>(
        "--" + spec.key, [&ov, key = spec.key](const std::string& v) { ov.values[key] = v; }, desc);
  }
  return sub;
}

tgkd::RunConfig resolve(const Overrides& ov) {
  tgkd::ConfigValues values = ov.config_file.empty() ? tgkd::ConfigValues{} : tgkd::ConfigValues::load(ov.config_file);
  for (const auto& [k, v] : ov.values) values.set(k, v);
  return tgkd::resolve_config(values);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distillation with per-sample fusion ratios from trilateral geometry"};
  app.require_subcommand(1);
  Overrides ov;
  CLI::App* teacher = add_command(app, "train-teacher", "train the teacher on cross-entropy", ov);
  CLI::App* distill = add_command(app, "distill", "distill a student from a saved teacher", ov);
  CLI::App* analyze = add_command(app, "analyze", "discrepancy groups, ratio tables and histograms", ov);
  CLI::App* selfcheck = app.add_subcommand("selfcheck", "run the gradient, hypergradient and metric oracles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(tgkd::ExitCode::config);
  }

  try {
    if (selfcheck->parsed()) {
      return tgkd::cmd_selfcheck(std::cout) ? 0 : static_cast<int>(tgkd::ExitCode::numeric);
    }
    const tgkd::RunConfig cfg = resolve(ov);
    if (teacher->parsed()) tgkd::cmd_train_teacher(cfg, std::cout);
    if (distill->parsed()) tgkd::cmd_distill(cfg, std::cout);
    if (analyze->parsed()) tgkd::cmd_analyze(cfg, std::cout);
  } catch (const tgkd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(tgkd::ExitCode::numeric);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(tgkd::ExitCode::data);
  }
  return 0;
}
