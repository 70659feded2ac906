#include "cli.hpp"

extern char** environ;

int main(int argc, char** argv) {
  return elegant::cli::run_cli(std::vector<std::string>(argv, argv + argc),
                               elegant::cli::environment_from(environ));
}
