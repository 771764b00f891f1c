#include <string>
#include <vector>

#include "vdanlg/cli.hpp"

int main(int argc, char** argv) {
  return vdanlg::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
