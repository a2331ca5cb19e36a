#include "dvlab/cli.hpp"

int main(int argc, char** argv) { return dvlab::cli::main(argc, argv); }
