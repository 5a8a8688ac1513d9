#include "ddro/cuts.hpp"

#include <stdexcept>
#include <string>

namespace ddro {

ReformulationSkeleton build_reformulation(const TwoStageInstance& instance,
                                          const Regressor& model, const Vec& x,
                                          const Mat& residuals, double xi,
                                          int wasserstein_p, GroundNorm norm) {
  if (wasserstein_p != 1 || norm != GroundNorm::L1) {
    throw std::runtime_error(
        "exact reformulation requires order-1 Wasserstein with the l1 ground "
        "norm; got p=" +
        std::to_string(wasserstein_p) + " with " +
        (norm == GroundNorm::L1 ? "l1" : "l2") + " norm");
  }
  instance.validate();
  if (xi < 0.0) throw std::runtime_error("ambiguity radius must be nonnegative");
  if (model.d_x != static_cast<int>(x.size())) {
    throw std::runtime_error("covariate length does not match the fitted model");
  }
  if (residuals.cols() != instance.T.constant.cols()) {
    throw std::runtime_error("residual dimension does not match d_y");
  }
  if (residuals.rows() == 0) throw std::runtime_error("no residual scenarios");

  ReformulationSkeleton skel;
  skel.instance = instance;
  skel.x = x;
  const int c = instance.coupling_index;
  skel.embedding = embed(model, x, instance.z_lower[c], instance.z_upper[c]);
  skel.residuals = residuals;
  skel.xi = xi;
  return skel;
}

BendersCut make_cut(const TwoStageInstance& instance,
                    const std::vector<WeightedDual>& duals, int scenario,
                    int iteration) {
  if (duals.empty()) throw std::runtime_error("cut needs at least one dual");
  const int d_z = static_cast<int>(instance.c_z.size());
  const int d_y = static_cast<int>(instance.T.constant.cols());

  BendersCut cut;
  cut.scenario = scenario;
  cut.iteration = iteration;
  cut.s = Mat::Zero(d_z + 1, d_y);
  cut.t = Vec::Zero(d_z + 1);

  for (const WeightedDual& wd : duals) {
    if (wd.pi.size() != instance.T.constant.rows()) {
      throw std::runtime_error("dual vector length does not match the recourse rows");
    }
    if (wd.epsilon.size() != d_y) {
      throw std::runtime_error("residual atom length does not match d_y");
    }
    // Constant block of T and of h.
    Vec s0 = instance.T.constant.transpose() * wd.pi;
    cut.s.row(0) += wd.weight * s0.transpose();
    cut.t[0] += wd.weight *
                (s0.dot(wd.epsilon) + instance.h.constant.col(0).dot(wd.pi));
    for (int i = 0; i < d_z; ++i) {
      Vec si = instance.T.coeffs[i].transpose() * wd.pi;
      cut.s.row(i + 1) += wd.weight * si.transpose();
      cut.t[i + 1] += wd.weight * (si.dot(wd.epsilon) +
                                   instance.h.coeffs[i].col(0).dot(wd.pi));
    }
  }
  return cut;
}

CutPieceExpansion expand_on_piece(const BendersCut& cut,
                                  const EmbeddingPiece& piece, int coupling) {
  const int d_z = static_cast<int>(cut.t.size()) - 1;
  CutPieceExpansion ex;
  ex.linear = Vec::Zero(d_z);
  ex.bilinear = Vec::Zero(d_z);

  ex.constant = cut.s.row(0).dot(piece.a) + cut.t[0];
  double zc_from_const_block = cut.s.row(0).dot(piece.b);
  for (int i = 0; i < d_z; ++i) {
    double on_a = cut.s.row(i + 1).dot(piece.a) + cut.t[i + 1];
    double on_b = cut.s.row(i + 1).dot(piece.b);
    if (i == coupling) {
      ex.linear[i] = on_a + zc_from_const_block;
      ex.quad = on_b;
    } else {
      ex.linear[i] = on_a;
      ex.bilinear[i] = on_b;
    }
  }
  return ex;
}

double evaluate_cut(const BendersCut& cut,
                    const PiecewiseAffineEmbedding& embedding, const Vec& z,
                    int coupling) {
  const int d_z = static_cast<int>(cut.t.size()) - 1;
  if (z.size() != d_z) throw std::runtime_error("decision length mismatch in cut evaluation");
  const double z_c = z[coupling];
  const EmbeddingPiece& piece = embedding.pieces[embedding.piece_index(z_c)];
  CutPieceExpansion ex = expand_on_piece(cut, piece, coupling);
  if (!piece.feasible) {
    throw EmptyNeighborhood("cut evaluated inside an infeasible embedding piece");
  }
  double value = ex.constant + ex.linear.dot(z) + ex.quad * z_c * z_c;
  for (int i = 0; i < d_z; ++i) {
    if (i != coupling) value += ex.bilinear[i] * z[i] * z_c;
  }
  return value;
}

}  // namespace ddro
