#include <iostream>

#include "compad/cli.hpp"

int main(int argc, char** argv) {
  return compad::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
