from django.db import models


class RunManifest(models.Model):
    """
    Record of one pipeline command run.

    Attributes:
        subcommand (str): Management command that produced the run.
        seed (int): Root seed of every random stream in the run.
        artifact_version (str): Version of the output formats.
        config_echo (dict): Effective configuration after command-line overrides.
        output_files (list): Files written, relative to the output directory.
        timings (dict): Wall-clock seconds per stage.
        exit_code (int): 0 ok, 1 usage or configuration error, 2 numerical diagnostic.
        created (datetime): When the record was made.
    """
    id = models.AutoField(primary_key=True)
    subcommand = models.CharField(max_length=25)
    seed = models.BigIntegerField(null=True, blank=True)
    artifact_version = models.CharField(max_length=25)
    config_echo = models.JSONField(default=dict)
    output_files = models.JSONField(default=list)
    timings = models.JSONField(default=dict)
    exit_code = models.IntegerField(default=0)
    created = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created']

    def __str__(self):
        return f"{self.subcommand} run {self.id} (seed {self.seed}, exit {self.exit_code})"
