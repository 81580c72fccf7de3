#include "hallu/cli.hpp"

int main(int argc, char** argv) { return hallu::cli::run(argc, argv); }
