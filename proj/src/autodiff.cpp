#include "tide/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tide/errors.hpp"

namespace tide::ad {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(std::string_view op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

// Numerically stable softplus: log(1 + e^x).
double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix row_logsumexp(const Matrix& a) {
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out(i, 0) = m + std::log((a.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("item() on non-scalar " + shape_str(v));
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite input");
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  if (!value.allFinite()) throw NumericError("variable: non-finite input");
  nodes_.push_back(Node{"variable", std::move(value), {}, nullptr, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Parameter& param) {
  if (!param.value.allFinite()) {
    throw NumericError("parameter '" + param.name + "' holds non-finite values");
  }
  nodes_.push_back(Node{"leaf", param.value, {}, nullptr, &param, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError(std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (!value.allFinite()) {
    throw NumericError(std::string(op) + ": produced non-finite values");
  }
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& contribution) {
  const std::size_t id = v.id();
  if (!nodes_[id].requires_grad) return;
  if (!touched_[id]) {
    adjoints_[id] = contribution;
    touched_[id] = true;
  } else {
    adjoints_[id] += contribution;
  }
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss recorded on another tape");
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
  }
  adjoints_.assign(nodes_.size(), Matrix());
  touched_.assign(nodes_.size(), false);
  adjoints_[loss.id()] = Matrix::Ones(1, 1);
  touched_[loss.id()] = true;

  // Nodes are appended in creation order, so a reverse index sweep is a
  // reverse topological order and visits each node once.
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!touched_[id]) continue;
    Node& node = nodes_[id];
    if (node.param != nullptr) {
      node.param->grad += adjoints_[id];
    } else if (node.backward) {
      node.backward(*this, adjoints_[id]);
    }
  }
}

Matrix Tape::grad(Var v) const {
  const std::size_t id = v.id();
  if (id < touched_.size() && touched_[id]) return adjoints_[id];
  return Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
}

// --- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
  Matrix out = a.value() * b.value().transpose();
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var spmm(const SparseMatrix& s, Var x) {
  if (static_cast<Eigen::Index>(s.size()) != x.rows()) {
    throw ShapeError("spmm: shape mismatch " + std::to_string(s.size()) + "x" +
                     std::to_string(s.size()) + " vs " + shape_str(x.value()));
  }
  Matrix out = s.multiply(x.value());
  // The operator is captured by pointer; it must outlive the backward pass.
  const SparseMatrix* sp = &s;
  return x.tape().record("spmm", std::move(out), {x}, [sp, x](Tape& t, const Matrix& g) {
    t.accumulate(x, sp->transpose_multiply(g));
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record("add_row", std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Var a, double k) {
  Matrix out = a.value() * k;
  return a.tape().record("scale", std::move(out), {a},
                         [a, k](Tape& t, const Matrix& g) { t.accumulate(a, g * k); });
}

Var add_scalar(Var a, double k) {
  Matrix out = a.value().array() + k;
  return a.tape().record("add_scalar", std::move(out), {a},
                         [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  Matrix out = a.value().array().square();
  return a.tape().record("square", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var exp(Var a) {
  // exp(709.78) is the largest finite double.
  if (a.value().size() > 0 && a.value().maxCoeff() > 709.0) {
    throw DomainError("exp: argument " + std::to_string(a.value().maxCoeff()) + " overflows");
  }
  Matrix out = a.value().array().exp();
  const std::size_t out_id = a.tape().size();
  return a.tape().record("exp", std::move(out), {a}, [a, out_id](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value(out_id)));
  });
}

Var log(Var a) {
  if (a.value().size() > 0 && a.value().minCoeff() <= 0.0) {
    throw DomainError("log: non-positive argument " + std::to_string(a.value().minCoeff()));
  }
  Matrix out = a.value().array().log();
  return a.tape().record("log", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record("relu", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var softplus(Var a) {
  Matrix out = a.value().unaryExpr(&softplus_scalar);
  return a.tape().record("softplus", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(&sigmoid_scalar)));
  });
}

Var positive_scale(Var a, double floor) {
  Matrix sp = a.value().unaryExpr(&softplus_scalar);
  Matrix out = sp.cwiseMax(floor);
  return a.tape().record(
      "positive_scale", std::move(out), {a}, [a, floor](Tape& t, const Matrix& g) {
        Matrix d = a.value().unaryExpr(&sigmoid_scalar);
        const Matrix sp = a.value().unaryExpr(&softplus_scalar);
        d = (sp.array() > floor).select(d, 0.0);
        t.accumulate(a, g.cwiseProduct(d));
      });
}

Var softmax_rows(Var a) {
  const Matrix lse = row_logsumexp(a.value());
  Matrix out = (a.value().colwise() - lse.col(0)).array().exp();
  const std::size_t out_id = a.tape().size();
  return a.tape().record("softmax_rows", std::move(out), {a}, [a, out_id](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(out_id);
    // dL/da = p .* (g - rowsum(g .* p))
    const Eigen::VectorXd dot = g.cwiseProduct(p).rowwise().sum();
    t.accumulate(a, p.cwiseProduct(g.colwise() - dot));
  });
}

Var log_softmax_rows(Var a) {
  const Matrix lse = row_logsumexp(a.value());
  Matrix out = a.value().colwise() - lse.col(0);
  const std::size_t out_id = a.tape().size();
  return a.tape().record("log_softmax_rows", std::move(out), {a},
                         [a, out_id](Tape& t, const Matrix& g) {
                           const Matrix p = t.value(out_id).array().exp();
                           const Eigen::VectorXd gs = g.rowwise().sum();
                           Matrix d = g - (p.array().colwise() * gs.array()).matrix();
                           t.accumulate(a, d);
                         });
}

Var logsumexp_rows(Var a) {
  if (a.cols() == 0) throw ShapeError("logsumexp_rows: zero columns");
  Matrix out = row_logsumexp(a.value());
  const std::size_t out_id = a.tape().size();
  return a.tape().record("logsumexp_rows", std::move(out), {a},
                         [a, out_id](Tape& t, const Matrix& g) {
                           const Matrix& lse = t.value(out_id);
                           Matrix p = (a.value().colwise() - lse.col(0)).array().exp();
                           t.accumulate(a, (p.array().colwise() * g.col(0).array()).matrix());
                         });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const auto count = static_cast<double>(a.value().size());
  if (count == 0) throw ShapeError("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / count;
  return a.tape().record("mean", std::move(out), {a}, [a, count](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / count));
  });
}

Var reparameterize(Var mu, Var sigma, const Matrix& noise) {
  require_same_shape("reparameterize", mu, sigma);
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw ShapeError("reparameterize: noise shape " + shape_str(noise) + " vs " +
                     shape_str(mu.value()));
  }
  Matrix out = mu.value() + sigma.value().cwiseProduct(noise);
  return mu.tape().record("reparameterize", std::move(out), {mu, sigma},
                          [mu, sigma, noise](Tape& t, const Matrix& g) {
                            t.accumulate(mu, g);
                            if (t.requires_grad(sigma)) t.accumulate(sigma, g.cwiseProduct(noise));
                          });
}

Var squared_error_mean(Var a, const Matrix& target) {
  if (target.rows() != a.rows() || target.cols() != a.cols()) {
    throw ShapeError("squared_error_mean: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(target));
  }
  const auto count = static_cast<double>(target.size());
  if (count == 0) throw ShapeError("squared_error_mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = (a.value() - target).squaredNorm() / count;
  return a.tape().record("squared_error_mean", std::move(out), {a},
                         [a, target, count](Tape& t, const Matrix& g) {
                           t.accumulate(a, (2.0 * g(0, 0) / count) * (a.value() - target));
                         });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return a.tape().record("concat_cols", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.leftCols(a.cols()));
    t.accumulate(b, g.rightCols(b.cols()));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i]) >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                       shape_str(a.value()));
    }
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(static_cast<Eigen::Index>(rows[i]));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record("gather_rows", std::move(out), {a},
                         [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
                           Matrix d = Matrix::Zero(a.rows(), a.cols());
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             d.row(static_cast<Eigen::Index>(idx[i])) +=
                                 g.row(static_cast<Eigen::Index>(i));
                           }
                           t.accumulate(a, d);
                         });
}

Var pick(Var a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " +
                     shape_str(a.value()));
  }
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int c = index[static_cast<std::size_t>(i)];
    if (c < 0 || c >= a.cols()) {
      throw ShapeError("pick: column " + std::to_string(c) + " outside " + shape_str(a.value()));
    }
    out(i, 0) = a.value()(i, c);
  }
  std::vector<int> idx(index.begin(), index.end());
  return a.tape().record("pick", std::move(out), {a},
                         [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
                           Matrix d = Matrix::Zero(a.rows(), a.cols());
                           for (Eigen::Index i = 0; i < a.rows(); ++i) {
                             d(i, idx[static_cast<std::size_t>(i)]) = g(i, 0);
                           }
                           t.accumulate(a, d);
                         });
}

Var diagonal(Var a) {
  if (a.rows() != a.cols()) throw ShapeError("diagonal: non-square " + shape_str(a.value()));
  Matrix out = a.value().diagonal();
  return a.tape().record("diagonal", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.diagonal() = g.col(0);
    t.accumulate(a, d);
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

}  // namespace tide::ad
