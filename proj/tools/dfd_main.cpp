#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "dfd/errors.hpp"
#include "run_config.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kValidation = 2, kCapability = 3, kNumerical = 4, kIo = 5 };

void add_common(CLI::App* sub, dfd::cli::Overrides& o) {
  sub->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "run seed");
  sub->add_option("--sigma", o.sigma, "observation noise standard deviation");
  sub->add_option("--method", o.method, "dfd_dps | dps | ddpm_prior_only | baseline");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--steps", o.steps, "reverse steps (train-prior: optimizer steps)");
  sub->add_option("--tau", o.tau, "x0-space data step");
  sub->add_option("--variant", o.variant, "as_written | ddpm_posterior");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dfd::cli;
  CLI::App app{"Depth from defocus with a coded aperture and diffusion posterior sampling"};
  app.require_subcommand(1);
  Overrides o;
  std::optional<std::string> truth, psf_file, pinhole, background;
  std::optional<double> scale;
  bool flip = false;
  std::vector<std::string> runs;

  auto* simulate = app.add_subcommand("simulate", "render synthetic scenes and noisy coded observations");
  add_common(simulate, o);
  auto* reconstruct = app.add_subcommand("reconstruct", "recover RGB and depth from a simulate output");
  add_common(reconstruct, o);
  reconstruct->add_option("--input", o.input, "simulate output directory");
  auto* eval = app.add_subcommand("eval", "score run directories against a simulate output");
  add_common(eval, o);
  eval->add_option("--truth", truth, "simulate output directory");
  eval->add_option("runs", runs, "reconstruct (or simulate) output directories");
  auto* train = app.add_subcommand("train-prior", "train the denoiser prior on synthetic patches");
  add_common(train, o);
  auto* psf = app.add_subcommand("psf", "inspect, rescale or calibrate a coded PSF");
  psf->require_subcommand(1);
  auto* inspect = psf->add_subcommand("inspect", "print per-channel sum, support and centroid");
  auto* rescale = psf->add_subcommand("rescale", "write the PSF rescaled about its center");
  auto* calibrate = psf->add_subcommand("calibrate", "estimate the PSF from pinhole and background frames");
  for (auto* sub : {inspect, rescale, calibrate}) {
    add_common(sub, o);
    sub->add_option("--psf", psf_file, "PSF file (default: synthetic pattern)");
  }
  rescale->add_option("--scale", scale, "scale factor");
  rescale->add_flag("--flip", flip, "mirror the kernel");
  calibrate->add_option("--pinhole", pinhole, "pinhole frame (PNG)");
  calibrate->add_option("--background", background, "background frame (PNG)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (truth) o.patch["eval"]["truth"] = *truth;
    if (!runs.empty()) o.patch["eval"]["runs"] = runs;
    if (psf_file) o.patch["psf"]["file"] = *psf_file;
    if (scale) o.patch["psf"]["scale"] = *scale;
    if (flip) o.patch["psf"]["flip"] = true;
    if (pinhole) o.patch["psf"]["pinhole"] = *pinhole;
    if (background) o.patch["psf"]["background"] = *background;
    const RunConfig cfg = load_config(o, train->parsed() ? StepsTarget::training : StepsTarget::sampler);
    if (simulate->parsed()) run_simulate(cfg);
    else if (reconstruct->parsed()) run_reconstruct(cfg);
    else if (eval->parsed()) run_eval(cfg);
    else if (train->parsed()) run_train_prior(cfg);
    else if (inspect->parsed()) run_psf_inspect(cfg, std::cout);
    else if (rescale->parsed()) run_psf_rescale(cfg);
    else if (calibrate->parsed()) run_psf_calibrate(cfg);
    return kOk;
  } catch (const dfd::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const dfd::DegeneratePsfError& e) {
    std::cerr << "error: degenerate PSF: " << e.what() << "\n";
    return kValidation;
  } catch (const dfd::CapabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCapability;
  } catch (const dfd::NumericalError& e) {
    std::cerr << "error: numerical failure";
    if (e.step() >= 0) std::cerr << " at step " << e.step();
    std::cerr << ": " << e.what() << "\n";
    return kNumerical;
  } catch (const dfd::SingularityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const dfd::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const dfd::CalibrationError& e) {
    std::cerr << "error: calibration failed: " << e.what() << "\n";
    return kNumerical;
  } catch (const dfd::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const dfd::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
