#ifndef CTDG_ERRORS_HPP
#define CTDG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ctdg {

// Input/config problems the caller can fix; mapped to exit code 2 by the CLI.
class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ctdg

#endif  // CTDG_ERRORS_HPP
