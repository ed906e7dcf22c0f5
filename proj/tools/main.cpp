#include <iostream>

#include "srvae/cli.hpp"

int main(int argc, char** argv) {
  return srvae::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
