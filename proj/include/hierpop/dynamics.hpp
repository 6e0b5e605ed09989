#pragma once

#include "hierpop/gridfn.hpp"
#include "hierpop/model.hpp"

#include <stdexcept>
#include <vector>

namespace hierpop {

class BlowUpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StepMode { quasilinear, semilinear };

/// Per-step mass ledger of the upwind scheme. The trapezoid/finite-volume
/// pairing makes d(mass)/dt = births - deaths - outflow close to roundoff.
struct StepLedger {
  double dt = 0.0;
  double mass_before = 0.0;
  double mass_after = 0.0;
  double rate_sum = 0.0;  // trapezoid sum of the applied right-hand side, d(mass)/dt
  double births = 0.0;    // int int beta p
  double deaths = 0.0;    // int mu p
  double outflow = 0.0;   // face flux at s = m
  /// Relative defect of the discrete balance d(mass)/dt = births - deaths - outflow.
  double defect() const;
};

struct Trajectory {
  struct Diagnostic {
    double t = 0.0;
    double mass = 0.0;
    double P = 0.0;
    double outflow = 0.0;
    double ledger_defect = 0.0;
  };
  std::vector<double> times;            // requested output times
  std::vector<GridFunction> snapshots;  // density at each output time
  std::vector<Diagnostic> diagnostics;  // one entry per step
};

/// The rescaled clock tau(t) = int_0^t gamma2(P) dt' of a trajectory, with
/// monotone lookup in both directions.
struct TimeRescaling {
  std::vector<double> t;
  std::vector<double> tau;
  std::vector<double> g;  // gamma2(P) samples along the run

  double tau_of(double time) const;
  double t_of(double tau_value) const;
};

/// Largest stable explicit step: the advective CFL bound, the source bound
/// and the discrete positivity bound, whichever is smallest.
double cfl_dt(const GridFunction& p, const ModelIngredients& ing, double cfl,
              StepMode mode = StepMode::quasilinear);

/// One explicit Euler step of the conservative upwind discretization with the
/// nonlocal terms frozen at step start. Zero inflow at s = 0, free outflow at
/// s = m. Semilinear mode advects with gamma1 alone and divides the sources
/// by gamma2(P).
GridFunction step(const GridFunction& p, double dt, const ModelIngredients& ing,
                  StepMode mode = StepMode::quasilinear, StepLedger* ledger = nullptr);

struct SimOptions {
  double cfl = 0.9;
  StepMode mode = StepMode::quasilinear;
  std::vector<double> output_times;  // snapshot times
  double mass_ceiling = 1e9;
  bool store_all_steps = false;  // keep a snapshot at every step (memory!)
};

/// Repeated stepping with the adaptive CFL step; snapshots interpolate
/// linearly in time between the steps bracketing each output time.
Trajectory simulate(const GridFunction& p0, double T, const ModelIngredients& ing,
                    const SimOptions& opts = {});

/// Grabosch-Heijmans clock change of a recorded trajectory.
TimeRescaling time_rescale(const Trajectory& traj, const ModelIngredients& ing);

}  // namespace hierpop
