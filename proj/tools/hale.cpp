#include <string>
#include <vector>

#include "hale/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hale::cli::dispatch(args);
}
