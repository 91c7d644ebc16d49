#include <string>
#include <vector>

#include "iagn/cli.hpp"

int main(int argc, char** argv) {
  return iagn::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
