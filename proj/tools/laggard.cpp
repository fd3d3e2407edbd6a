#include "laggard/cli.hpp"

int main(int argc, char** argv) { return laggard::cli::run(argc, argv); }
