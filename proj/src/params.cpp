#include "ctdg/params.hpp"

#include <stdexcept>

namespace ctdg {

int ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    const int id = count();
    names_.push_back(name);
    values_.push_back(std::move(init));
    index_.emplace(name, id);
    return id;
}

int ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

int ParamStore::require(const std::string& name) const {
    const int id = find(name);
    if (id < 0) throw std::logic_error("missing parameter: " + name);
    return id;
}

std::vector<ad::Var> ParamStore::bind(ad::Tape& tape, bool requires_grad) const {
    std::vector<ad::Var> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(tape.leaf(v, requires_grad));
    return vars;
}

}  // namespace ctdg
