#include "forage/cli.hpp"

int main(int argc, char** argv) { return forage::cli::run(argc, argv); }
