#ifndef CTDG_PARAMS_HPP
#define CTDG_PARAMS_HPP

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctdg/ad.hpp"

namespace ctdg {

// Named learnable tensors with stable ids; the id order fixes the reduction
// and serialization order everywhere (optimizer, checkpoints, grad checks).
class ParamStore {
  public:
    int add(const std::string& name, Eigen::MatrixXd init);
    int find(const std::string& name) const;
    int require(const std::string& name) const;

    Eigen::MatrixXd& value(int id) { return values_[static_cast<std::size_t>(id)]; }
    const Eigen::MatrixXd& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
    const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
    int count() const { return static_cast<int>(values_.size()); }

    // Register every tensor as a tape leaf; result is aligned with ids.
    std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad = true) const;

  private:
    std::vector<std::string> names_;
    std::vector<Eigen::MatrixXd> values_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace ctdg

#endif  // CTDG_PARAMS_HPP
