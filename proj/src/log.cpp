#include "invlens/log.hpp"

#include <iostream>

namespace invlens {

namespace {
WarningSink& sink() {
  static WarningSink s;
  return s;
}
}  // namespace

void warn(const std::string& message) {
  if (sink()) {
    sink()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningSink set_warning_sink(WarningSink s) {
  WarningSink old = std::move(sink());
  sink() = std::move(s);
  return old;
}

}  // namespace invlens
