#include "xdistill/cli.hpp"
#include "xdistill/runtime.hpp"

int main(int argc, char** argv) {
  xdistill::tune_allocator();
  return xdistill::cli::run_cli(argc, argv);
}
