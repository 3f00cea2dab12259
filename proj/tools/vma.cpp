#include "vma/cli.hpp"

int main(int argc, char** argv) { return vma::cli::run(argc, argv); }
