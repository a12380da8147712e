#include "sr2/cli.hpp"

int main(int argc, char** argv) { return sr2::run_cli(argc, argv); }
