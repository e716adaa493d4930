#include <string>
#include <vector>

#include "cbf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cbf::cli::run(args);
}
