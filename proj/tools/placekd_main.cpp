#include <iostream>
#include <string>
#include <vector>

#include "placekd/cli.h"

int main(int argc, char** argv) {
  return placekd::cli_main(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
