#include <iostream>
#include <string>
#include <vector>

#include "condseq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return condseq::dispatch(args, std::cout, std::cerr);
}
