#include "amnesia/cli.hpp"

int main(int argc, char** argv) { return amnesia::cli::main(argc, argv); }
