#include "tide/gradcheck.hpp"

#include <cmath>
#include <string>

#include "tide/errors.hpp"

namespace tide::ad {
namespace {

double evaluate(const ScalarFn& fn, const Matrix& point, const std::string& where) {
  try {
    Tape tape;
    return fn(tape, tape.constant(point)).item();
  } catch (const NumericError& e) {
    throw NumericError("gradient check at " + where + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError("gradient check at " + where + ": " + e.what());
  }
}

double evaluate(const ParameterLossFn& fn, const std::string& where) {
  try {
    Tape tape;
    return fn(tape).item();
  } catch (const NumericError& e) {
    throw NumericError("gradient check at " + where + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError("gradient check at " + where + ": " + e.what());
  }
}

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError("gradient check: non-finite value at " + where);
}

std::string entry_name(std::size_t tensor, Eigen::Index r, Eigen::Index c) {
  return "tensor " + std::to_string(tensor) + " entry (" + std::to_string(r) + ", " +
         std::to_string(c) + ")";
}

void consider(GradCheckResult& res, std::size_t tensor, Eigen::Index r, Eigen::Index c,
              double analytic, double numeric) {
  const double err = relative_error(analytic, numeric);
  ++res.entries_checked;
  if (err > res.max_relative_error || res.entries_checked == 1) {
    res.max_relative_error = err;
    res.worst_tensor = tensor;
    res.worst_row = r;
    res.worst_col = c;
    res.analytic = analytic;
    res.numeric = numeric;
  }
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
}

GradCheckResult check_gradients(const ScalarFn& fn, const Matrix& point, double h) {
  Matrix analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var loss = fn(tape, x);
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  GradCheckResult res;
  Matrix probe = point;
  for (Eigen::Index r = 0; r < point.rows(); ++r) {
    for (Eigen::Index c = 0; c < point.cols(); ++c) {
      const std::string where = entry_name(0, r, c);
      const double orig = probe(r, c);
      probe(r, c) = orig + h;
      const double up = evaluate(fn, probe, where);
      probe(r, c) = orig - h;
      const double down = evaluate(fn, probe, where);
      probe(r, c) = orig;
      require_finite(up, where);
      require_finite(down, where);
      require_finite(analytic(r, c), where);
      consider(res, 0, r, c, analytic(r, c), (up - down) / (2.0 * h));
    }
  }
  return res;
}

GradCheckResult check_parameter_gradients(const ParameterLossFn& fn,
                                          std::span<Parameter* const> params, double h) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = fn(tape);
    tape.backward(loss);
  }
  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const Matrix analytic = p.grad;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const std::string where = p.name + " " + entry_name(k, r, c);
        const double orig = p.value(r, c);
        p.value(r, c) = orig + h;
        const double up = evaluate(fn, where);
        p.value(r, c) = orig - h;
        const double down = evaluate(fn, where);
        p.value(r, c) = orig;
        require_finite(up, where);
        require_finite(down, where);
        require_finite(analytic(r, c), where);
        consider(res, k, r, c, analytic(r, c), (up - down) / (2.0 * h));
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return res;
}

}  // namespace tide::ad
