// Command-line driver: gen, run --stages, report.
//
// Exit codes: 0 success, 2 configuration error, 3 missing prerequisite
// stage, 4 numerical failure, 1 anything else.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecgtrust/pipeline.hpp"

namespace {

namespace pl = ecgtrust::pipeline;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPrerequisite = 3;
constexpr int kExitNumerical = 4;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration (unknown keys are rejected)");
  cmd->add_option("--seed", o.seed, "Override the configured master seed");
  cmd->add_option("--out", o.out, "Override the output directory");
}

pl::RunConfig resolve(const CommonOptions& o) {
  pl::RunConfig c = o.config_path.empty() ? pl::RunConfig{} : pl::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  c.validate();
  return c;
}

std::vector<std::string> expand_stages(const std::vector<std::string>& requested) {
  std::vector<std::string> out;
  for (const auto& s : requested) {
    if (s == "all") return pl::stage_order();
    out.push_back(s);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ecgtrust: multimodal ECG fusion with explanation trust checks"};
  app.require_subcommand(1);

  CommonOptions gen_opts;
  CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic record corpus and splits");
  add_common(gen, gen_opts);

  CommonOptions run_opts;
  std::vector<std::string> stages = {"all"};
  CLI::App* run = app.add_subcommand("run", "Run pipeline stages on a generated corpus");
  add_common(run, run_opts);
  run->add_option("--stages", stages,
                  "Comma-separated stages: preprocess,balance,train,fuse,attack,certify or all")
      ->delimiter(',');

  CommonOptions report_opts;
  CLI::App* report = app.add_subcommand("report", "Summarize a finished run");
  add_common(report, report_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const auto c = resolve(gen_opts);
      pl::cmd_gen(c);
      std::cout << "generated corpus in " << c.output_dir << "\n";
    } else if (run->parsed()) {
      const auto c = resolve(run_opts);
      pl::cmd_pipeline(c, expand_stages(stages));
      std::cout << "stages complete in " << c.output_dir << "\n";
    } else if (report->parsed()) {
      const auto c = resolve(report_opts);
      pl::cmd_report(c);
      std::cout << "report written to " << c.output_dir << "/report\n";
    }
  } catch (const pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const pl::MissingPrerequisite& e) {
    std::cerr << "missing prerequisite (stage '" << e.stage() << "'): " << e.what() << "\n";
    return kExitPrerequisite;
  } catch (const pl::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}
