#pragma once

#include <span>
#include <string>
#include <vector>

#include "ccnn/ordinal.hpp"

namespace ccnn {

// |theta| below this is treated as the independence copula u*v.
inline constexpr double kIndependenceTheta = 1e-6;
inline constexpr double kDefaultThetaMax = 35.0;

struct CopulaPartials {
  double value = 0.0;
  double du = 0.0;      // dC/du
  double dv = 0.0;      // dC/dv
  double dtheta = 0.0;  // dC/dtheta
};

// One-parameter bivariate copula family.
class BivariateCopula {
 public:
  virtual ~BivariateCopula() = default;
  virtual double cdf(double u, double v, double theta) const = 0;
  virtual CopulaPartials partials(double u, double v, double theta) const = 0;
  virtual std::string name() const = 0;
};

class FrankCopula final : public BivariateCopula {
 public:
  double cdf(double u, double v, double theta) const override;
  CopulaPartials partials(double u, double v, double theta) const override;
  std::string name() const override { return "frank"; }
};

const BivariateCopula& frank_copula();

// C(u,v) = -(1/theta) log(1 + (e^{-theta u}-1)(e^{-theta v}-1)/(e^{-theta}-1))
double frank_cdf(double u, double v, double theta);

// Dependence parameter of one edge. r and s index the context's node list.
struct CopulaEdgeParams {
  int r = 0;
  int s = 1;
  double theta = 0.0;
};

// Discrete joint distribution of two ordinal outputs.
struct JointTable {
  int rows = 0;
  int cols = 0;
  std::vector<double> probs;  // row-major

  double at(int i, int j) const { return probs[static_cast<std::size_t>(i) * cols + j]; }
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
  double total() const;
};

// Marginal cdf values u_k = Phi(z_k), k = 0..L, with u_0 = 0 and u_L = 1.
std::vector<double> marginal_cdf(std::span<const double> f, const OrdinalUnaryParams& phi);

// Rectangle inclusion-exclusion of the copula over the two marginal cdf grids.
JointTable joint_table_from_cdfs(std::span<const double> u, std::span<const double> v, double theta,
                                 const BivariateCopula& family = frank_copula());

JointTable pairwise_joint_table(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                                const OrdinalUnaryParams& phi_s, double theta,
                                const BivariateCopula& family = frank_copula());

double pairwise_log_prob(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                         const OrdinalUnaryParams& phi_s, double theta, Level l_r, Level l_s,
                         const BivariateCopula& family = frank_copula());

struct PairGradient {
  double log_prob = 0.0;
  double theta = 0.0;
  std::vector<double> raw_r;
  std::vector<double> raw_s;
  std::vector<double> feature;
};

PairGradient copula_gradients(std::span<const double> f, const OrdinalUnaryParams& phi_r,
                              const OrdinalUnaryParams& phi_s, double theta, Level l_r, Level l_s,
                              const BivariateCopula& family = frank_copula());

// Kendall's tau of a discrete joint table (concordant minus discordant mass).
double kendall_tau(const JointTable& table);

}  // namespace ccnn
