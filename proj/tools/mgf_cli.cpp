// Command-line front end; subcommands are wired up as the library grows.
#include <cstdio>

int main() {
  std::puts("mgf: no subcommands wired yet");
  return 0;
}
