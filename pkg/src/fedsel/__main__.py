from fedsel.experiment.cli import main

main()
